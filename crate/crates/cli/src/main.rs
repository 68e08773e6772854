use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use cpaudit_core::harness::synthetic::{
    discover_predictions, emit_suite, evaluate_tagged, SynthModel,
};
use cpaudit_core::harness::{aggregate, plot_csv, render_table, summary_csv, AggregateReport};
use cpaudit_core::ingest::{read_json, read_predictions, write_json, write_text, SynthManifest};
use cpaudit_core::synth::default_manifest;
use cpaudit_core::{CellId, Error, ExperimentConfig, MetricsReport};

#[derive(Debug, Parser)]
#[command(name = "cpaudit", version, about = "Conformal set reliability audits")]
struct Cli {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit synthetic datasets, split manifests and model predictions.
    Synth {
        /// `default` for the built-in suite, or a path to a JSON spec list.
        #[arg(long, default_value = "default")]
        manifest: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate prediction files into per-cell metric reports.
    Evaluate {
        /// A single prediction CSV, or an output root with a `predictions/` tree.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine cell reports into the aggregate JSON, CSV and Markdown table.
    Aggregate {
        #[arg(long)]
        cells: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the plot-ready trade-off CSV from an aggregate report.
    Report {
        #[arg(long)]
        aggregate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let config = match path {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn synth(config: &ExperimentConfig, manifest: &str, out: &Path) -> Result<()> {
    let specs = if manifest == "default" {
        default_manifest()
    } else {
        read_json::<SynthManifest>(manifest)?.specs
    };
    if let Some(unknown) = config
        .datasets
        .iter()
        .find(|d| !specs.iter().any(|s| &s.id == *d))
    {
        bail!("config names dataset `{unknown}`, which is not in the manifest");
    }
    let written = emit_suite(
        &specs,
        &SynthModel::standard(config.temperature),
        config,
        out,
    )?;
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}

fn evaluate(
    config: &ExperimentConfig,
    predictions: &Path,
    model: Option<String>,
    dataset: Option<String>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let jobs = if predictions.is_dir() {
        if model.is_some() || dataset.is_some() {
            bail!("--model and --dataset apply only to a single prediction file");
        }
        discover_predictions(predictions)?
            .into_iter()
            .filter(|(id, _)| config.wants_model(&id.model) && config.wants_dataset(&id.dataset))
            .collect()
    } else {
        let (Some(model), Some(dataset)) = (model, dataset) else {
            bail!("a single prediction file needs --model and --dataset");
        };
        vec![(CellId::new(model, dataset, seed), predictions.to_path_buf())]
    };
    if jobs.is_empty() {
        bail!("no prediction files found under {}", predictions.display());
    }
    for (id, path) in &jobs {
        let data = read_predictions(path)?;
        let report = evaluate_tagged(id, &data, config)?;
        write_json(cell_path(out, id), &report)?;
    }
    println!(
        "evaluated {} cells into {}",
        jobs.len(),
        out.join("cells").display()
    );
    Ok(())
}

fn cell_path(out: &Path, id: &CellId) -> PathBuf {
    out.join("cells").join(format!("{}.json", id.file_stem()))
}

fn read_cells(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(|p| Ok(read_json(p)?)).collect()
}

fn run_aggregate(config: &ExperimentConfig, cells: &Path, out: &Path) -> Result<()> {
    let cells = read_cells(cells)?;
    if cells.is_empty() {
        bail!("no cell reports found");
    }
    let report = aggregate(&cells, config)?;
    write_json(out.join("aggregate.json"), &report)?;
    write_text(&out.join("aggregate.csv"), &summary_csv(&report))?;
    let table = render_table(&report);
    write_text(&out.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn report(aggregate: &Path, out: &Path) -> Result<()> {
    let report: AggregateReport = read_json(aggregate)?;
    write_text(out, &plot_csv(&report))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let default_out = PathBuf::from(&config.output_dir);
    match cli.command {
        Command::Synth { manifest, out } => {
            synth(&config, &manifest, out.as_deref().unwrap_or(&default_out))
        }
        Command::Evaluate {
            predictions,
            model,
            dataset,
            seed,
            out,
        } => evaluate(
            &config,
            &predictions,
            model,
            dataset,
            seed,
            out.as_deref().unwrap_or(&default_out),
        ),
        Command::Aggregate { cells, out } => {
            run_aggregate(&config, &cells, out.as_deref().unwrap_or(&default_out))
        }
        Command::Report { aggregate, out } => {
            let out = out.unwrap_or_else(|| aggregate.with_file_name("plot.csv"));
            report(&aggregate, &out)
        }
    }
}

/// Machine-readable failure record written to stderr.
fn error_record(err: &anyhow::Error) -> Value {
    let mut record = json!({ "kind": "cli_error", "message": format!("{err:#}") });
    if let Some(e) = err.downcast_ref::<Error>() {
        record["kind"] = json!(e.kind());
        match e {
            Error::MissingCell { model, dataset } | Error::SeedMismatch { model, dataset, .. } => {
                record["model"] = json!(model);
                record["dataset"] = json!(dataset);
            }
            Error::Io { path, .. } | Error::Json { path, .. } => {
                record["path"] = json!(path);
            }
            Error::Parse { path, line, .. } => {
                record["path"] = json!(path);
                record["line"] = json!(line);
            }
            _ => {}
        }
    }
    json!({ "error": record })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_record(&err));
            ExitCode::FAILURE
        }
    }
}
