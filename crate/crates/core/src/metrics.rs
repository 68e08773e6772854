//! Reliability and performance metrics over prediction sets and probabilities.
//!
//! - CR: marginal coverage rate.
//! - SS: average set size.
//! - SSC(k): coverage within the stratum of sets of exact size `k`.
//! - SSCS: minimum SSC over strata holding at least `min_stratum_count`
//!   samples. The unthresholded minimum is reported alongside.
//! - ECE: top-label expected calibration error, equal-width bins over
//!   `(1/k, 1]`, left-open and right-closed.
//! - AUC: Mann-Whitney binary AUC and its prevalence-weighted one-vs-one
//!   multiclass extension.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conformal::{check_labels, PredictionSet, ProbabilityMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_STRATUM_COUNT: usize = 10;
pub const DEFAULT_ECE_BINS: usize = 15;

fn check_pair(sets: &[PredictionSet], labels: &[usize]) -> Result<()> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn coverage_rate(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    check_pair(sets, labels)?;
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

pub fn avg_set_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: usize = sets.iter().map(PredictionSet::len).sum();
    Ok(total as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumCoverage {
    pub coverage: f64,
    pub count: usize,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStratifiedCoverage {
    /// Keyed by exact set size; only nonempty strata appear.
    pub strata: BTreeMap<usize, StratumCoverage>,
    /// Min coverage over strata with `count >= min_stratum_count`, or over
    /// all strata when none qualifies.
    pub sscs: f64,
    /// Min coverage over all nonempty strata.
    pub sscs_raw: f64,
    /// True when no stratum met the count threshold.
    pub degenerate: bool,
    pub min_stratum_count: usize,
}

pub fn size_stratified_coverage(
    sets: &[PredictionSet],
    labels: &[usize],
    min_stratum_count: usize,
) -> Result<SizeStratifiedCoverage> {
    check_pair(sets, labels)?;
    let mut tallies: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (s, &y) in sets.iter().zip(labels) {
        let t = tallies.entry(s.len()).or_default();
        t.0 += 1;
        t.1 += usize::from(s.contains(y));
    }
    let strata: BTreeMap<usize, StratumCoverage> = tallies
        .into_iter()
        .map(|(size, (count, hits))| {
            let coverage = hits as f64 / count as f64;
            (
                size,
                StratumCoverage {
                    coverage,
                    count,
                    hits,
                },
            )
        })
        .collect();

    let min_of = |it: &mut dyn Iterator<Item = &StratumCoverage>| {
        it.map(|s| s.coverage).fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.min(c)))
        })
    };
    let sscs_raw = min_of(&mut strata.values()).expect("at least one stratum");
    let thresholded = min_of(&mut strata.values().filter(|s| s.count >= min_stratum_count));
    Ok(SizeStratifiedCoverage {
        sscs: thresholded.unwrap_or(sscs_raw),
        sscs_raw,
        degenerate: thresholded.is_none(),
        min_stratum_count,
        strata,
    })
}

/// Confidence-bin index in `0..n_bins` for bins of equal width over
/// `(low, 1]`, right-closed. Values at or below `low` land in bin 0.
fn ece_bin(confidence: f64, low: f64, n_bins: usize) -> usize {
    let width = (1.0 - low) / n_bins as f64;
    let guess = ((confidence - low) / width).ceil() as isize - 1;
    let mut b = guess.clamp(0, n_bins as isize - 1) as usize;
    // settle rounding at the edges against explicitly computed edges
    let upper = |b: usize| {
        if b + 1 == n_bins {
            1.0
        } else {
            low + (b + 1) as f64 * width
        }
    };
    while b > 0 && confidence <= upper(b - 1) {
        b -= 1;
    }
    while b + 1 < n_bins && confidence > upper(b) {
        b += 1;
    }
    b
}

pub fn expected_calibration_error(
    probs: &ProbabilityMatrix,
    labels: &[usize],
    n_bins: usize,
) -> Result<f64> {
    check_labels(probs, labels)?;
    let n = probs.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be >= 1".into()));
    }
    let low = 1.0 / probs.k() as f64;
    // (count, correct, confidence sum)
    let mut bins = vec![(0usize, 0usize, 0.0f64); n_bins];
    for (i, &y) in labels.iter().enumerate() {
        let pred = probs.argmax(i);
        let conf = probs.get(i, pred);
        let b = &mut bins[ece_bin(conf, low, n_bins)];
        b.0 += 1;
        b.1 += usize::from(pred == y);
        b.2 += conf;
    }
    Ok(bins
        .iter()
        .filter(|b| b.0 > 0)
        .map(|&(count, correct, conf_sum)| {
            let c = count as f64;
            (c / n as f64) * (correct as f64 / c - conf_sum / c).abs()
        })
        .sum())
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half.
///
/// Computed from midranks in `O(n log n)`.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of midranks (1-based) of positives, doubled to stay integral
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        // midrank of ranks start+1..=end is (start + 1 + end) / 2
        twice_rank_sum += pos_in_group * (start + 1 + end) as u128;
        start = end;
    }
    let n_pos = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Prevalence-weighted one-vs-one AUC.
///
/// For every pair of classes present in `labels`, the pair AUC is the mean
/// of the two directed AUCs on the samples of that pair, and pairs are
/// weighted by their sample count. With two classes and complementary
/// columns this is `auc_binary` on the class-1 column.
pub fn auc_weighted_ovo(probs: &ProbabilityMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let k = probs.k();
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }

    let pairs: Vec<(usize, usize)> = present
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| present[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let pair_count = |(a, b): (usize, usize)| counts[a] + counts[b];
    let total_weight: usize = pairs.iter().map(|&p| pair_count(p)).sum();

    let mut weighted = 0.0;
    for &(a, b) in &pairs {
        let rows: Vec<usize> = (0..labels.len())
            .filter(|&r| labels[r] == a || labels[r] == b)
            .collect();
        let is_a: Vec<bool> = rows.iter().map(|&r| labels[r] == a).collect();
        let is_b: Vec<bool> = is_a.iter().map(|&x| !x).collect();
        let score_a: Vec<f64> = rows.iter().map(|&r| probs.get(r, a)).collect();
        let score_b: Vec<f64> = rows.iter().map(|&r| probs.get(r, b)).collect();
        let pair = (auc_binary(&score_a, &is_a)? + auc_binary(&score_b, &is_b)?) / 2.0;
        // a lone pair gets weight exactly 1
        weighted += (pair_count((a, b)) as f64 / total_weight as f64) * pair;
    }
    Ok(weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(members: &[usize], k: usize) -> PredictionSet {
        PredictionSet::new(members.to_vec(), k).unwrap()
    }

    #[test]
    fn coverage_examples() {
        let sets = vec![set(&[0], 2), set(&[1], 2), set(&[0, 1], 2), set(&[0], 2)];
        assert_eq!(coverage_rate(&sets, &[0, 1, 0, 1]).unwrap(), 0.75);
        let full = vec![PredictionSet::full(3); 5];
        assert_eq!(coverage_rate(&full, &[0, 1, 2, 0, 1]).unwrap(), 1.0);
        let empty = vec![set(&[], 3); 3];
        assert_eq!(coverage_rate(&empty, &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(coverage_rate(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn set_size_examples() {
        let sets = vec![set(&[0], 3), set(&[1], 3), set(&[0, 1], 3), set(&[1, 2], 3)];
        assert_eq!(avg_set_size(&sets).unwrap(), 1.5);
        assert_eq!(avg_set_size(&[set(&[0], 2), set(&[1], 2)]).unwrap(), 1.0);
        assert_eq!(
            avg_set_size(&[set(&[], 3), PredictionSet::full(3)]).unwrap(),
            1.5
        );
        assert!(matches!(avg_set_size(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn ssc_hand_fixture() {
        // sizes [1,1,2,2], hits [1,0,1,1]
        let sets = vec![set(&[0], 3), set(&[0], 3), set(&[0, 1], 3), set(&[1, 2], 3)];
        let labels = [0, 1, 1, 2];
        let r = size_stratified_coverage(&sets, &labels, 1).unwrap();
        assert_eq!(r.strata[&1].coverage, 0.5);
        assert_eq!(r.strata[&2].coverage, 1.0);
        assert_eq!(r.sscs, 0.5);
        assert!(!r.degenerate);
    }

    #[test]
    fn ssc_full_sets() {
        let sets = vec![PredictionSet::full(4); 7];
        let r = size_stratified_coverage(&sets, &[0, 1, 2, 3, 0, 1, 2], 1).unwrap();
        assert_eq!(r.strata.len(), 1);
        assert_eq!(r.strata[&4].coverage, 1.0);
        assert_eq!(r.sscs, 1.0);
    }

    #[test]
    fn ssc_threshold_and_degeneracy() {
        // 12 singletons all covered, 3 pairs none covered
        let mut sets = vec![set(&[0], 3); 12];
        let mut labels = vec![0; 12];
        sets.extend(vec![set(&[1, 2], 3); 3]);
        labels.extend([0, 0, 0]);
        let r = size_stratified_coverage(&sets, &labels, 10).unwrap();
        assert_eq!(r.sscs, 1.0);
        assert_eq!(r.sscs_raw, 0.0);
        assert!(!r.degenerate);

        let r = size_stratified_coverage(&sets, &labels, 20).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.sscs, 0.0);
    }

    #[test]
    fn empty_stratum_has_zero_coverage() {
        let sets = vec![set(&[], 2), set(&[0], 2)];
        let r = size_stratified_coverage(&sets, &[0, 0], 1).unwrap();
        assert_eq!(r.strata[&0].coverage, 0.0);
        assert_eq!(r.sscs, 0.0);
    }

    #[test]
    fn ece_examples() {
        let p = ProbabilityMatrix::from_rows(&[[0.8, 0.2], [0.2, 0.8]]).unwrap();
        let e = expected_calibration_error(&p, &[0, 1], 15).unwrap();
        assert!((e - 0.2).abs() < 1e-12, "{e}");

        let p = ProbabilityMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(expected_calibration_error(&p, &[0, 1], 15).unwrap(), 0.0);
        assert_eq!(expected_calibration_error(&p, &[1, 2], 15).unwrap(), 1.0);
    }

    #[test]
    fn ece_bins_are_right_closed() {
        // k = 2, 10 bins of width 0.05 over (0.5, 1]
        assert_eq!(ece_bin(0.5, 0.5, 10), 0);
        assert_eq!(ece_bin(0.55, 0.5, 10), 0);
        assert_eq!(ece_bin(0.5500001, 0.5, 10), 1);
        assert_eq!(ece_bin(1.0, 0.5, 10), 9);
        assert_eq!(ece_bin(0.95, 0.5, 10), 8);
        for i in 0..=1000 {
            let c = 0.5 + i as f64 * 0.0005;
            let b = ece_bin(c, 0.5, 10);
            let lo = if b == 0 {
                f64::NEG_INFINITY
            } else {
                0.5 + b as f64 * 0.05
            };
            let hi = if b == 9 {
                1.0
            } else {
                0.5 + (b + 1) as f64 * 0.05
            };
            assert!(c > lo && c <= hi, "{c} in bin {b}");
        }
    }

    #[test]
    fn auc_examples() {
        let a = auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        let a = auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(a, 1.0);
        let a = auc_binary(&[0.3; 6], &[false, true, false, true, true, false]).unwrap();
        assert_eq!(a, 0.5);
        assert!(matches!(
            auc_binary(&[0.1, 0.2], &[true, true]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn ovo_separated_three_classes() {
        let p = ProbabilityMatrix::from_rows(&[
            [0.8, 0.1, 0.1],
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.2, 0.7, 0.1],
            [0.1, 0.1, 0.8],
            [0.1, 0.2, 0.7],
        ])
        .unwrap();
        assert_eq!(auc_weighted_ovo(&p, &[0, 0, 1, 1, 2, 2]).unwrap(), 1.0);
        assert!(matches!(
            auc_weighted_ovo(&p, &[1; 6]),
            Err(Error::SingleClass)
        ));
    }
}
