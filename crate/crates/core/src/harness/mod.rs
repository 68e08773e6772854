//! Experiment orchestration: seeded splits, per-cell evaluation, and
//! cross-seed / cross-dataset aggregation.

mod aggregate;
pub mod synthetic;

pub use aggregate::{
    aggregate, plot_csv, render_table, summary_csv, AggregateHeader, AggregateReport, CellMean,
    MetricSet, ModelSummary,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, prediction_sets, ProbabilityMatrix, Threshold};
use crate::error::{Error, Result};
use crate::metrics::{
    auc_weighted_ovo, avg_set_size, coverage_rate, expected_calibration_error,
    size_stratified_coverage, StratumCoverage, DEFAULT_ECE_BINS, DEFAULT_MIN_STRATUM_COUNT,
};

pub const DEFAULT_ALPHA: f64 = 0.10;
pub const DEFAULT_CAL_FRACTION: f64 = 0.20;
/// Share of a synthetic dataset reserved as test before the train/cal split.
pub const DEFAULT_TEST_FRACTION: f64 = 0.30;
pub const DEFAULT_SEED_COUNT: u64 = 15;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub cal_fraction: f64,
    pub test_fraction: f64,
    pub min_stratum_count: usize,
    pub ece_bins: usize,
    /// Temperature of the distorted-oracle model in synthetic runs.
    pub temperature: f64,
    /// Restricts which models are evaluated or aggregated; empty means all.
    pub models: Vec<String>,
    /// Restricts which datasets are evaluated or aggregated; empty means all.
    pub datasets: Vec<String>,
    /// Model id to plot group; models missing here are their own group.
    pub groups: BTreeMap<String, String>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            seeds: (0..DEFAULT_SEED_COUNT).collect(),
            cal_fraction: DEFAULT_CAL_FRACTION,
            test_fraction: DEFAULT_TEST_FRACTION,
            min_stratum_count: DEFAULT_MIN_STRATUM_COUNT,
            ece_bins: DEFAULT_ECE_BINS,
            temperature: DEFAULT_TEMPERATURE,
            models: Vec::new(),
            datasets: Vec::new(),
            groups: BTreeMap::new(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            return bad(format!("cal_fraction {} outside (0, 1)", self.cal_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction {} outside [0, 1)",
                self.test_fraction
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be unique".into());
        }
        if self.ece_bins == 0 {
            return bad("ece_bins must be >= 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        Ok(())
    }

    pub fn cell_config(&self) -> CellConfig {
        CellConfig {
            alpha: self.alpha,
            min_stratum_count: self.min_stratum_count,
            ece_bins: self.ece_bins,
        }
    }

    pub fn group_of(&self, model: &str) -> String {
        self.groups
            .get(model)
            .cloned()
            .unwrap_or_else(|| model.to_string())
    }

    pub fn wants_model(&self, model: &str) -> bool {
        self.models.is_empty() || self.models.iter().any(|m| m == model)
    }

    pub fn wants_dataset(&self, dataset: &str) -> bool {
        self.datasets.is_empty() || self.datasets.iter().any(|d| d == dataset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `round(fraction * total)` across
/// groups of the given sizes. Ties go to the lower group index.
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let quotas: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Stratified, seeded split.
///
/// First `test_fraction` of each class goes to test (pass 0 when the test
/// partition is supplied externally), then `cal_fraction` of what remains
/// goes to calibration. Every class left for training with at least two
/// samples gets at least one calibration and one training row when the
/// totals allow it. Returned index lists are sorted.
pub fn split(
    labels: &[usize],
    seed: u64,
    cal_fraction: f64,
    test_fraction: f64,
) -> Result<SplitIndices> {
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "cal_fraction {cal_fraction} outside (0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} outside [0, 1)"
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_alloc = if test_fraction > 0.0 {
        apportion(&sizes, test_fraction)
    } else {
        vec![0; k]
    };
    let pool: Vec<usize> = sizes.iter().zip(&test_alloc).map(|(s, t)| s - t).collect();
    for (class, (&size, &p)) in sizes.iter().zip(&pool).enumerate() {
        if size > 0 && p < 2 {
            return Err(Error::TooFewSamples { class, count: p });
        }
    }

    let mut cal_alloc = apportion(&pool, cal_fraction);
    // keep one training row per class
    for c in 0..k {
        if pool[c] > 0 && cal_alloc[c] >= pool[c] {
            cal_alloc[c] = pool[c] - 1;
        }
    }
    // best effort: one calibration row per class, borrowed from the largest
    for c in 0..k {
        if pool[c] >= 2 && cal_alloc[c] == 0 {
            let donor = (0..k)
                .filter(|&d| cal_alloc[d] > 1)
                .max_by_key(|&d| (cal_alloc[d], std::cmp::Reverse(d)));
            if let Some(d) = donor {
                cal_alloc[d] -= 1;
            }
            cal_alloc[c] = 1;
        }
    }

    let mut out = SplitIndices {
        train: Vec::new(),
        cal: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let (test, rest) = members.split_at(test_alloc[c]);
        let (cal, train) = rest.split_at(cal_alloc[c]);
        out.test.extend_from_slice(test);
        out.cal.extend_from_slice(cal);
        out.train.extend_from_slice(train);
    }
    out.train.sort_unstable();
    out.cal.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub alpha: f64,
    pub min_stratum_count: usize,
    pub ece_bins: usize,
}

impl Default for CellConfig {
    fn default() -> Self {
        ExperimentConfig::default().cell_config()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
}

impl CellId {
    pub fn new(model: impl Into<String>, dataset: impl Into<String>, seed: u64) -> Self {
        Self {
            model: model.into(),
            dataset: dataset.into(),
            seed,
        }
    }

    pub fn file_stem(&self) -> String {
        format!("{}__{}__seed{}", self.model, self.dataset, self.seed)
    }
}

/// Metrics for one (model, dataset, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    /// `null` when the threshold is the full label set.
    pub q: Option<f64>,
    pub coverage_rate: f64,
    pub avg_set_size: f64,
    pub ssc_by_stratum: BTreeMap<usize, StratumCoverage>,
    pub sscs: f64,
    pub sscs_raw: f64,
    pub sscs_degenerate: bool,
    pub min_stratum_count: usize,
    pub ece: f64,
    pub ece_bins: usize,
    pub auc: f64,
}

impl MetricsReport {
    pub fn id(&self) -> CellId {
        CellId::new(&self.model, &self.dataset, self.seed)
    }
}

/// Calibrates on the `cal` rows, builds sets on the `test` rows, and
/// computes every metric on the test rows.
pub fn run_cell(
    id: &CellId,
    probs: &ProbabilityMatrix,
    labels: &[usize],
    cal: &[usize],
    test: &[usize],
    config: &CellConfig,
) -> Result<MetricsReport> {
    crate::conformal::check_labels(probs, labels)?;
    let cal_rows: BTreeSet<usize> = cal.iter().copied().collect();
    if let Some(&i) = test.iter().find(|i| cal_rows.contains(i)) {
        return Err(Error::Overlap(i));
    }
    if let Some(&i) = cal.iter().chain(test).find(|&&i| i >= probs.n()) {
        return Err(Error::InvalidConfig(format!(
            "row index {i} out of range for {} rows",
            probs.n()
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }

    let pick = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let cal_probs = probs.select(cal);
    let cal_labels = pick(cal);
    let test_probs = probs.select(test);
    let test_labels = pick(test);

    let quantile = calibrate(&cal_probs, &cal_labels, config.alpha)?;
    let sets = prediction_sets(&test_probs, &quantile);
    let ssc = size_stratified_coverage(&sets, &test_labels, config.min_stratum_count)?;

    Ok(MetricsReport {
        model: id.model.clone(),
        dataset: id.dataset.clone(),
        seed: id.seed,
        alpha: config.alpha,
        n_cal: cal.len(),
        n_test: test.len(),
        q: match quantile.threshold {
            Threshold::Value(q) => Some(q),
            Threshold::FullSet => None,
        },
        coverage_rate: coverage_rate(&sets, &test_labels)?,
        avg_set_size: avg_set_size(&sets)?,
        ssc_by_stratum: ssc.strata,
        sscs: ssc.sscs,
        sscs_raw: ssc.sscs_raw,
        sscs_degenerate: ssc.degenerate,
        min_stratum_count: config.min_stratum_count,
        ece: expected_calibration_error(&test_probs, &test_labels, config.ece_bins)?,
        ece_bins: config.ece_bins,
        auc: auc_weighted_ovo(&test_probs, &test_labels)?,
    })
}
