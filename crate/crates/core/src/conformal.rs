//! Split conformal prediction with the Least Ambiguous Class (LAC) score.
//!
//! 1. Score: `s(x, y) = 1 - p(y | x)`
//! 2. Threshold: the `ceil((n + 1)(1 - alpha))`-th smallest calibration
//!    score, or [`Threshold::FullSet`] when that rank exceeds `n`.
//! 3. Set: `{ y : s(x, y) <= q }`, inclusive, possibly empty.
//!
//! Under exchangeability of calibration and test points this gives
//! `P(y in C(x)) >= 1 - alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Row-major `n x k` matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    k: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Validates every entry in `[0, 1]` and every row sum within
    /// [`ROW_SUM_TOLERANCE`] of 1.
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new_unchecked(k, data)?;
        let bad = m.invalid_rows();
        if let Some(&row) = bad.first() {
            return Err(Error::InvalidProbabilities(format!(
                "{} invalid row(s), first at {row}: {:?}",
                bad.len(),
                m.row(row)
            )));
        }
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let k = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidProbabilities("no rows; use `empty(k)`".into()))?;
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != k {
                return Err(Error::InvalidProbabilities(format!(
                    "row {i} has {} entries, expected {k}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(k, data)
    }

    pub fn empty(k: usize) -> Result<Self> {
        Self::new(k, Vec::new())
    }

    /// Shape check only. Used by readers that report every bad row at once.
    pub(crate) fn new_unchecked(k: usize, data: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidProbabilities(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        if !data.len().is_multiple_of(k) {
            return Err(Error::InvalidProbabilities(format!(
                "{} entries is not a multiple of k = {k}",
                data.len()
            )));
        }
        Ok(Self { k, data })
    }

    /// Indices of rows with an entry outside `[0, 1]` or a sum off by more
    /// than [`ROW_SUM_TOLERANCE`].
    pub(crate) fn invalid_rows(&self) -> Vec<usize> {
        self.rows()
            .enumerate()
            .filter(|(_, r)| !row_is_valid(r))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.data[i * self.k + y]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { k: self.k, data }
    }

    /// Index of the largest entry in row `i`; ties go to the lowest index.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }
}

fn row_is_valid(row: &[f64]) -> bool {
    let in_range = row.iter().all(|p| (0.0..=1.0).contains(p));
    in_range && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE
}

/// First index of the maximum. NaN never wins.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (y, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = y;
        }
    }
    best
}

/// Row-major `n x k` matrix of nonconformity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    k: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.data[i * self.k + y]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Lac,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Value(f64),
    /// The order statistic does not exist; every class is admitted.
    FullSet,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Value(q) => Some(q),
            Threshold::FullSet => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationQuantile {
    pub threshold: Threshold,
    pub n_cal: usize,
    pub alpha: f64,
    pub score_kind: ScoreKind,
}

/// Sorted, duplicate-free subset of `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
    k: usize,
}

impl PredictionSet {
    /// Sorts and dedups `members`; rejects any index `>= k`.
    pub fn new(mut members: Vec<usize>, k: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&y) = members.last() {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    row: 0,
                    label: y,
                    k,
                });
            }
        }
        Ok(Self { members, k })
    }

    pub fn full(k: usize) -> Self {
        Self {
            members: (0..k).collect(),
            k,
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.binary_search(&y).is_ok()
    }

    pub fn is_superset_of(&self, other: &PredictionSet) -> bool {
        other.members.iter().all(|&y| self.contains(y))
    }
}

pub fn lac_scores(probs: &ProbabilityMatrix) -> ScoreMatrix {
    ScoreMatrix {
        k: probs.k(),
        data: probs.as_slice().iter().map(|p| 1.0 - p).collect(),
    }
}

/// LAC score of each sample's true label.
pub fn calibration_scores(probs: &ProbabilityMatrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(probs, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| 1.0 - probs.get(i, y))
        .collect())
}

pub(crate) fn check_labels(probs: &ProbabilityMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.n() {
        return Err(Error::LengthMismatch {
            left: probs.n(),
            right: labels.len(),
        });
    }
    let k = probs.k();
    match labels.iter().position(|&y| y >= k) {
        Some(row) => Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            k,
        }),
        None => Ok(()),
    }
}

/// 1-indexed rank `ceil((n + 1)(1 - alpha))` of the conformal order statistic.
///
/// A relative slack of a few ulps absorbs representation error in
/// `1 - alpha`, so that e.g. `n = 9, alpha = 0.1` gives exactly 9.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha);
    let slack = target * 4.0 * f64::EPSILON;
    ((target - slack).ceil() as usize).max(1)
}

pub fn conformal_quantile(cal_scores: &[f64], alpha: f64) -> Result<CalibrationQuantile> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let n = cal_scores.len();
    if n == 0 {
        return Err(Error::EmptyCalibration);
    }
    if cal_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore);
    }
    let r = conformal_rank(n, alpha);
    let threshold = if r > n {
        Threshold::FullSet
    } else {
        let mut sorted = cal_scores.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Threshold::Value(sorted[r - 1])
    };
    Ok(CalibrationQuantile {
        threshold,
        n_cal: n,
        alpha,
        score_kind: ScoreKind::Lac,
    })
}

/// Calibrates on `(probs, labels)` in one step.
pub fn calibrate(
    probs: &ProbabilityMatrix,
    labels: &[usize],
    alpha: f64,
) -> Result<CalibrationQuantile> {
    conformal_quantile(&calibration_scores(probs, labels)?, alpha)
}

pub fn prediction_sets(probs: &ProbabilityMatrix, q: &CalibrationQuantile) -> Vec<PredictionSet> {
    let k = probs.k();
    match q.threshold {
        Threshold::FullSet => (0..probs.n()).map(|_| PredictionSet::full(k)).collect(),
        Threshold::Value(q) => probs
            .rows()
            .map(|row| PredictionSet {
                members: (0..k).filter(|&y| 1.0 - row[y] <= q).collect(),
                k,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> ProbabilityMatrix {
        ProbabilityMatrix::from_rows(rows).unwrap()
    }

    fn q(v: f64) -> CalibrationQuantile {
        CalibrationQuantile {
            threshold: Threshold::Value(v),
            n_cal: 1,
            alpha: 0.1,
            score_kind: ScoreKind::Lac,
        }
    }

    #[test]
    fn matrix_validation() {
        assert!(ProbabilityMatrix::from_rows(&[[0.5, 0.6]]).is_err());
        assert!(ProbabilityMatrix::from_rows(&[[1.2, -0.2]]).is_err());
        assert!(ProbabilityMatrix::from_rows(&[[1.0]]).is_err());
        assert!(ProbabilityMatrix::new(3, vec![0.5, 0.5]).is_err());
        assert!(ProbabilityMatrix::from_rows(&[[0.5, 0.5 + 5e-7]]).is_ok());
        // no class-count ceiling
        let wide = vec![1.0 / 12.0; 12];
        assert_eq!(ProbabilityMatrix::from_rows(&[wide]).unwrap().k(), 12);
        assert_eq!(ProbabilityMatrix::empty(3).unwrap().n(), 0);
    }

    #[test]
    fn lac_examples() {
        let s = lac_scores(&m(&[&[1.0, 0.0]]));
        assert_eq!(s.row(0), &[0.0, 1.0]);
        let s = lac_scores(&m(&[&[0.7, 0.2, 0.1]]));
        assert_eq!(s.row(0), &[1.0 - 0.7, 1.0 - 0.2, 1.0 - 0.1]);
        assert!((s.get(0, 0) - 0.3).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.8).abs() < 1e-15);
        assert!((s.get(0, 2) - 0.9).abs() < 1e-15);
        let s = lac_scores(&m(&[&[0.25; 4]]));
        assert_eq!(s.row(0), &[0.75; 4]);
    }

    #[test]
    fn calibration_score_examples() {
        let p = m(&[&[0.9, 0.1], &[0.4, 0.6]]);
        let a = calibration_scores(&p, &[0, 0]).unwrap();
        assert!((a[0] - 0.1).abs() < 1e-15 && (a[1] - 0.6).abs() < 1e-15);
        let b = calibration_scores(&p, &[0, 1]).unwrap();
        assert!((b[0] - 0.1).abs() < 1e-15 && (b[1] - 0.4).abs() < 1e-15);
        let c = calibration_scores(&m(&[&[0.0, 1.0]]), &[1]).unwrap();
        assert_eq!(c, vec![0.0]);
        assert!(matches!(
            calibration_scores(&p, &[0, 2]),
            Err(Error::LabelOutOfRange {
                row: 1,
                label: 2,
                k: 2
            })
        ));
        assert!(matches!(
            calibration_scores(&p, &[0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn quantile_examples() {
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let cq = conformal_quantile(&scores, 0.1).unwrap();
        assert_eq!(cq.threshold, Threshold::Value(0.9));
        assert_eq!(cq.n_cal, 9);

        let cq = conformal_quantile(&[0.1, 0.2, 0.3, 0.4], 0.1).unwrap();
        assert_eq!(cq.threshold, Threshold::FullSet);

        let cq = conformal_quantile(&[0.5, 0.5, 0.5], 0.5).unwrap();
        assert_eq!(cq.threshold, Threshold::Value(0.5));
    }

    #[test]
    fn quantile_errors() {
        assert!(matches!(
            conformal_quantile(&[], 0.1),
            Err(Error::EmptyCalibration)
        ));
        assert!(matches!(
            conformal_quantile(&[0.1, f64::NAN], 0.1),
            Err(Error::NonFiniteScore)
        ));
        assert!(matches!(
            conformal_quantile(&[0.1], 0.0),
            Err(Error::InvalidAlpha(_))
        ));
        assert!(matches!(
            conformal_quantile(&[0.1], 1.0),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn rank_is_exact_on_integer_targets() {
        // (n + 1)(1 - alpha) integral in exact arithmetic
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(conformal_rank(19, 0.05), 19);
        assert_eq!(conformal_rank(99, 0.1), 90);
        assert_eq!(conformal_rank(499, 0.1), 450);
        assert_eq!(conformal_rank(500, 0.1), 451);
        assert_eq!(conformal_rank(3, 0.5), 2);
        assert_eq!(conformal_rank(4, 0.1), 5);
    }

    #[test]
    fn set_examples() {
        let p = m(&[&[0.7, 0.2, 0.1]]);
        assert_eq!(prediction_sets(&p, &q(0.35))[0].members(), &[0]);
        assert_eq!(prediction_sets(&p, &q(0.8))[0].members(), &[0, 1]);
        let p = m(&[&[0.5, 0.3, 0.2]]);
        assert!(prediction_sets(&p, &q(0.1))[0].is_empty());
    }

    #[test]
    fn inclusive_threshold() {
        let p = m(&[&[0.75, 0.25]]);
        // score of class 0 is exactly 0.25
        assert_eq!(prediction_sets(&p, &q(0.25))[0].members(), &[0]);
    }

    #[test]
    fn full_set_threshold() {
        let p = m(&[&[1.0, 0.0, 0.0], &[0.2, 0.3, 0.5]]);
        let cq = CalibrationQuantile {
            threshold: Threshold::FullSet,
            ..q(0.0)
        };
        for s in prediction_sets(&p, &cq) {
            assert_eq!(s, PredictionSet::full(3));
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn prediction_set_constructor() {
        let s = PredictionSet::new(vec![2, 0, 2], 3).unwrap();
        assert_eq!(s.members(), &[0, 2]);
        assert!(PredictionSet::new(vec![3], 3).is_err());
    }
}
