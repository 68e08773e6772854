//! The synthetic stress suite: Bayes-oracle, temperature-distorted oracle,
//! and LDA "models" evaluated on manifest specs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{run_cell, split, CellId, ExperimentConfig, MetricsReport};
use crate::conformal::ProbabilityMatrix;
use crate::error::Result;
use crate::ingest::{
    write_dataset, write_json, write_predictions, DatasetManifest, DatasetSource, PredictionData,
    SeedSplit, Split, SynthManifest,
};
use crate::synth::{distort, generate, oracle_posterior, Dataset, Lda, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthModel {
    Oracle,
    Distorted { temperature: f64 },
    Lda,
}

impl SynthModel {
    pub fn id(&self) -> String {
        match self {
            SynthModel::Oracle => "oracle".into(),
            SynthModel::Distorted { temperature } => format!("oracle-t{temperature}"),
            SynthModel::Lda => "lda".into(),
        }
    }

    /// Oracle, distorted oracle at `temperature`, and LDA.
    pub fn standard(temperature: f64) -> Vec<SynthModel> {
        vec![
            SynthModel::Oracle,
            SynthModel::Distorted { temperature },
            SynthModel::Lda,
        ]
    }
}

/// A generated dataset with its per-seed splits and full-data oracle
/// posterior.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub spec: SynthSpec,
    pub dataset: Dataset,
    pub manifest: DatasetManifest,
    pub oracle: ProbabilityMatrix,
}

pub fn prepare(spec: &SynthSpec, config: &ExperimentConfig) -> Result<PreparedDataset> {
    let dataset = generate(spec)?;
    let oracle = oracle_posterior(spec, dataset.latent_features())?;
    let splits = config
        .seeds
        .iter()
        .map(|&seed| {
            let s = split(
                &dataset.labels,
                seed,
                config.cal_fraction,
                config.test_fraction,
            )?;
            Ok(SeedSplit {
                seed,
                train: s.train,
                cal: s.cal,
                test: s.test,
                validation: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        dataset_id: spec.id.clone(),
        k: spec.k,
        n: dataset.n(),
        source: DatasetSource::Synth {
            spec_id: spec.id.clone(),
        },
        cal_fraction: config.cal_fraction,
        test_fraction: config.test_fraction,
        splits,
    };
    Ok(PreparedDataset {
        spec: spec.clone(),
        dataset,
        manifest,
        oracle,
    })
}

/// Calibration rows followed by test rows, tagged.
pub fn predictions(
    model: SynthModel,
    prepared: &PreparedDataset,
    seed_split: &SeedSplit,
) -> Result<PredictionData> {
    let rows: Vec<usize> = seed_split
        .cal
        .iter()
        .chain(&seed_split.test)
        .copied()
        .collect();
    let probs = match model {
        SynthModel::Oracle => prepared.oracle.select(&rows),
        SynthModel::Distorted { temperature } => {
            distort(&prepared.oracle.select(&rows), temperature)?
        }
        SynthModel::Lda => {
            let train = prepared.dataset.select(&seed_split.train);
            let lda = Lda::fit(&train.features, train.d, &train.labels, train.k)?;
            lda.predict_proba(&prepared.dataset.select(&rows).features)?
        }
    };
    let mut splits = vec![Split::Cal; seed_split.cal.len()];
    splits.resize(rows.len(), Split::Test);
    Ok(PredictionData {
        probs,
        labels: rows.iter().map(|&i| prepared.dataset.labels[i]).collect(),
        splits: Some(splits),
    })
}

/// Evaluates a tagged prediction table: calibrate on `cal` rows, score on
/// `test` rows.
pub fn evaluate_tagged(
    id: &CellId,
    data: &PredictionData,
    config: &ExperimentConfig,
) -> Result<MetricsReport> {
    if data.splits.is_none() {
        return Err(crate::error::Error::InvalidConfig(format!(
            "{}: prediction table has no split column",
            id.file_stem()
        )));
    }
    let cal = data.rows_with(Split::Cal);
    let test = data.rows_with(Split::Test);
    run_cell(
        id,
        &data.probs,
        &data.labels,
        &cal,
        &test,
        &config.cell_config(),
    )
}

/// Runs every (spec, seed, model) cell. Output order is spec, then seed,
/// then model, independent of thread scheduling.
pub fn run_suite(
    specs: &[SynthSpec],
    models: &[SynthModel],
    config: &ExperimentConfig,
) -> Result<Vec<MetricsReport>> {
    config.validate()?;
    let per_spec: Vec<Vec<MetricsReport>> = specs
        .par_iter()
        .filter(|s| config.wants_dataset(&s.id))
        .map(|spec| {
            let prepared = prepare(spec, config)?;
            let mut out = Vec::new();
            for seed_split in &prepared.manifest.splits {
                for &model in models {
                    let id = CellId::new(model.id(), &spec.id, seed_split.seed);
                    if !config.wants_model(&id.model) {
                        continue;
                    }
                    let data = predictions(model, &prepared, seed_split)?;
                    out.push(evaluate_tagged(&id, &data, config)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_spec.into_iter().flatten().collect())
}

/// Relative path of a prediction file under an output root.
pub fn prediction_path(root: &Path, id: &CellId) -> PathBuf {
    root.join("predictions")
        .join(&id.model)
        .join(&id.dataset)
        .join(format!("seed{}.csv", id.seed))
}

/// Writes datasets, manifests and prediction files for every spec, seed
/// and model under `root`. Returns the written paths, sorted.
pub fn emit_suite(
    specs: &[SynthSpec],
    models: &[SynthModel],
    config: &ExperimentConfig,
    root: &Path,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let synth_manifest = root.join("synth_manifest.json");
    write_json(
        &synth_manifest,
        &SynthManifest {
            specs: specs.to_vec(),
        },
    )?;
    let per_spec: Vec<Vec<PathBuf>> = specs
        .par_iter()
        .filter(|s| config.wants_dataset(&s.id))
        .map(|spec| {
            let prepared = prepare(spec, config)?;
            let mut written = Vec::new();
            let ds_path = root.join("datasets").join(format!("{}.csv", spec.id));
            write_dataset(&prepared.dataset, &ds_path)?;
            written.push(ds_path);
            let mf_path = root.join("manifests").join(format!("{}.json", spec.id));
            write_json(&mf_path, &prepared.manifest)?;
            written.push(mf_path);
            for seed_split in &prepared.manifest.splits {
                for &model in models {
                    let id = CellId::new(model.id(), &spec.id, seed_split.seed);
                    if !config.wants_model(&id.model) {
                        continue;
                    }
                    let data = predictions(model, &prepared, seed_split)?;
                    let path = prediction_path(root, &id);
                    write_predictions(&data.probs, &data.labels, data.splits.as_deref(), &path)?;
                    written.push(path);
                }
            }
            Ok(written)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<PathBuf> = per_spec.into_iter().flatten().collect();
    all.push(synth_manifest);
    all.sort();
    Ok(all)
}

/// Finds `predictions/<model>/<dataset>/seed<N>.csv` files under `root`.
pub fn discover_predictions(root: &Path) -> Result<Vec<(CellId, PathBuf)>> {
    let base = root.join("predictions");
    let read = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut entries = std::fs::read_dir(p)
            .map_err(|e| crate::error::Error::io(p, e))?
            .map(|e| {
                e.map(|e| e.path())
                    .map_err(|err| crate::error::Error::io(p, err))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort();
        Ok(entries)
    };
    let mut found = Vec::new();
    for model_dir in read(&base)?.into_iter().filter(|p| p.is_dir()) {
        for ds_dir in read(&model_dir)?.into_iter().filter(|p| p.is_dir()) {
            for file in read(&ds_dir)? {
                let seed = file
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("seed"))
                    .and_then(|n| n.strip_suffix(".csv"))
                    .and_then(|n| n.parse::<u64>().ok());
                let Some(seed) = seed else { continue };
                let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
                found.push((CellId::new(name(&model_dir), name(&ds_dir), seed), file));
            }
        }
    }
    found.sort();
    Ok(found)
}
