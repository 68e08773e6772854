use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, MetricsReport};
use crate::error::{Error, Result};

pub const NORMALIZATION_NOTE: &str =
    "per-dataset min-max normalization across models of seed-mean \
metrics, then averaged over datasets; datasets where all models tie normalize to 0.5";
pub const STD_NOTE: &str =
    "population standard deviation (ddof = 0) across datasets of per-dataset seed means";

/// Scalar metrics that are averaged across seeds and datasets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub coverage_rate: f64,
    pub avg_set_size: f64,
    pub sscs: f64,
    pub sscs_raw: f64,
    pub ece: f64,
    pub auc: f64,
}

impl MetricSet {
    fn of(r: &MetricsReport) -> Self {
        Self {
            coverage_rate: r.coverage_rate,
            avg_set_size: r.avg_set_size,
            sscs: r.sscs,
            sscs_raw: r.sscs_raw,
            ece: r.ece,
            auc: r.auc,
        }
    }

    fn map(parts: &[MetricSet], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&MetricSet) -> f64| f(&parts.iter().map(g).collect::<Vec<_>>());
        Self {
            coverage_rate: col(|m| m.coverage_rate),
            avg_set_size: col(|m| m.avg_set_size),
            sscs: col(|m| m.sscs),
            sscs_raw: col(|m| m.sscs_raw),
            ece: col(|m| m.ece),
            auc: col(|m| m.auc),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub model: String,
    pub dataset: String,
    pub n_seeds: usize,
    pub mean: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub group: String,
    pub n_datasets: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub auc_norm: f64,
    pub sscs_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateHeader {
    pub normalization: String,
    pub std: String,
    pub seeds: Vec<u64>,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub header: AggregateHeader,
    pub cells: Vec<CellMean>,
    pub models: Vec<ModelSummary>,
}

impl AggregateReport {
    pub fn model(&self, id: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == id)
    }

    pub fn cell(&self, model: &str, dataset: &str) -> Option<&CellMean> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.dataset == dataset)
    }
}

/// Min-max normalizes `values` to `[0, 1]`; all-equal input maps to 0.5.
fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Seed means per (model, dataset), then mean and std across datasets per
/// model, plus per-dataset min-max normalized AUC and SSCS.
///
/// Every model must have results on every dataset for the same seed list.
pub fn aggregate(cells: &[MetricsReport], config: &ExperimentConfig) -> Result<AggregateReport> {
    let cells: Vec<&MetricsReport> = cells
        .iter()
        .filter(|c| config.wants_model(&c.model) && config.wants_dataset(&c.dataset))
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut grid: BTreeMap<(&str, &str), BTreeMap<u64, &MetricsReport>> = BTreeMap::new();
    for c in &cells {
        let slot = grid.entry((&c.model, &c.dataset)).or_default();
        if slot.insert(c.seed, c).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate cell {}/{}/seed {}",
                c.model, c.dataset, c.seed
            )));
        }
    }
    let mut models: BTreeSet<&str> = cells.iter().map(|c| c.model.as_str()).collect();
    let mut datasets: BTreeSet<&str> = cells.iter().map(|c| c.dataset.as_str()).collect();
    // requested ids that produced no cells at all are missing too
    models.extend(config.models.iter().map(String::as_str));
    datasets.extend(config.datasets.iter().map(String::as_str));

    let mut reference: Option<Vec<u64>> = None;
    for &m in &models {
        for &d in &datasets {
            let seeds: Vec<u64> = match grid.get(&(m, d)) {
                Some(s) => s.keys().copied().collect(),
                None => {
                    return Err(Error::MissingCell {
                        model: m.into(),
                        dataset: d.into(),
                    })
                }
            };
            match &reference {
                None => reference = Some(seeds),
                Some(r) if *r != seeds => {
                    return Err(Error::SeedMismatch {
                        model: m.into(),
                        dataset: d.into(),
                        expected: r.clone(),
                        found: seeds,
                    })
                }
                Some(_) => {}
            }
        }
    }

    let cell_means: Vec<CellMean> = grid
        .iter()
        .map(|(&(m, d), seeds)| {
            let parts: Vec<MetricSet> = seeds.values().map(|r| MetricSet::of(r)).collect();
            CellMean {
                model: m.into(),
                dataset: d.into(),
                n_seeds: parts.len(),
                mean: MetricSet::map(&parts, mean),
            }
        })
        .collect();
    let lookup: BTreeMap<(&str, &str), &CellMean> = cell_means
        .iter()
        .map(|c| ((c.model.as_str(), c.dataset.as_str()), c))
        .collect();

    let model_list: Vec<&str> = models.iter().copied().collect();
    let mut auc_norm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut sscs_norm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &d in &datasets {
        let aucs: Vec<f64> = model_list
            .iter()
            .map(|&m| lookup[&(m, d)].mean.auc)
            .collect();
        let sscs: Vec<f64> = model_list
            .iter()
            .map(|&m| lookup[&(m, d)].mean.sscs)
            .collect();
        for (i, v) in min_max(&aucs).into_iter().enumerate() {
            auc_norm.entry(model_list[i]).or_default().push(v);
        }
        for (i, v) in min_max(&sscs).into_iter().enumerate() {
            sscs_norm.entry(model_list[i]).or_default().push(v);
        }
    }

    let summaries = model_list
        .iter()
        .map(|&m| {
            let per_dataset: Vec<MetricSet> =
                datasets.iter().map(|&d| lookup[&(m, d)].mean).collect();
            ModelSummary {
                model: m.into(),
                group: config.group_of(m),
                n_datasets: per_dataset.len(),
                mean: MetricSet::map(&per_dataset, mean),
                std: MetricSet::map(&per_dataset, std_pop),
                auc_norm: mean(&auc_norm[m]),
                sscs_norm: mean(&sscs_norm[m]),
            }
        })
        .collect();

    Ok(AggregateReport {
        header: AggregateHeader {
            normalization: NORMALIZATION_NOTE.into(),
            std: STD_NOTE.into(),
            seeds: reference.unwrap_or_default(),
            models: model_list.iter().map(|s| s.to_string()).collect(),
            datasets: datasets.iter().map(|s| s.to_string()).collect(),
        },
        cells: cell_means,
        models: summaries,
    })
}

fn f(x: f64) -> String {
    crate::ingest::format_float(x)
}

/// One row per model, raw means and stds plus normalized means.
pub fn summary_csv(report: &AggregateReport) -> String {
    let mut out = String::from(
        "model,group,n_datasets,auc_mean,auc_std,sscs_mean,sscs_std,sscs_raw_mean,sscs_raw_std,\
coverage_rate_mean,coverage_rate_std,avg_set_size_mean,avg_set_size_std,ece_mean,ece_std,\
auc_norm,sscs_norm\n",
    );
    for m in &report.models {
        let (a, s) = (&m.mean, &m.std);
        let values = [
            a.auc,
            s.auc,
            a.sscs,
            s.sscs,
            a.sscs_raw,
            s.sscs_raw,
            a.coverage_rate,
            s.coverage_rate,
            a.avg_set_size,
            s.avg_set_size,
            a.ece,
            s.ece,
            m.auc_norm,
            m.sscs_norm,
        ];
        write!(out, "{},{},{}", m.model, m.group, m.n_datasets).unwrap();
        for v in values {
            write!(out, ",{}", f(v)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Plot data for the AUC-vs-SSCS trade-off: normalized coordinates, with
/// raw mean ECE for marker size.
pub fn plot_csv(report: &AggregateReport) -> String {
    let mut out = String::from("model,group,auc_norm,sscs_norm,ece\n");
    for m in &report.models {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.model,
            m.group,
            f(m.auc_norm),
            f(m.sscs_norm),
            f(m.mean.ece)
        )
        .unwrap();
    }
    out
}

/// Markdown table of raw AUC and SSCS, `mean ± std` across datasets.
pub fn render_table(report: &AggregateReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "<!-- {} datasets x {} seeds; +- is the {} -->",
        report.header.datasets.len(),
        report.header.seeds.len(),
        STD_NOTE
    )
    .unwrap();
    out.push_str("| model | AUC | SSCS |\n|---|---|---|\n");
    for m in &report.models {
        writeln!(
            out,
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
            m.model, m.mean.auc, m.std.auc, m.mean.sscs, m.std.sscs
        )
        .unwrap();
    }
    out
}
