//! Wire formats shared with external model exporters.
//!
//! Prediction file (CSV, UTF-8, LF, mandatory header):
//!
//! ```text
//! y,p0,p1,...,p{k-1}[,split]
//! 1,2.9999999999999999e-1,7.0000000000000000e-1,cal
//! ```
//!
//! Columns are located by header name. `split` is one of `train`, `cal`,
//! `test`. Floats are written with 17 significant digits so a write/read
//! cycle reproduces every value exactly.
//!
//! Dataset file (CSV): `x0,...,x{d-1},y`. Dataset manifests and synthetic
//! spec manifests are JSON.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conformal::ProbabilityMatrix;
use crate::error::{Error, Result};
use crate::synth::{Dataset, Origin, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Cal,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cal => "cal",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "cal" => Some(Split::Cal),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionData {
    pub probs: ProbabilityMatrix,
    pub labels: Vec<usize>,
    pub splits: Option<Vec<Split>>,
}

impl PredictionData {
    /// Row indices carrying `tag`, in file order.
    pub fn rows_with(&self, tag: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..s.len()).filter(|&i| s[i] == tag).collect(),
            None => Vec::new(),
        }
    }
}

/// `{:.16e}`: 17 significant digits, round-trip exact for every finite f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct PredictionHeader {
    label: usize,
    probs: Vec<usize>,
    split: Option<usize>,
}

fn prediction_header(path: &Path, header: &csv::StringRecord) -> Result<PredictionHeader> {
    let mut label = None;
    let mut split = None;
    let mut probs: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        let name = name.trim();
        let slot = match name {
            "y" => &mut label,
            "split" => &mut split,
            _ => {
                let class = name
                    .strip_prefix('p')
                    .and_then(|c| c.parse::<usize>().ok())
                    .filter(|c| format!("p{c}") == name)
                    .ok_or_else(|| parse_err(path, 1, format!("unknown column `{name}`")))?;
                probs.push((class, col));
                continue;
            }
        };
        if slot.replace(col).is_some() {
            return Err(parse_err(path, 1, format!("duplicate column `{name}`")));
        }
    }
    let label = label.ok_or_else(|| parse_err(path, 1, "missing `y` column"))?;
    probs.sort_unstable();
    for (expected, &(class, _)) in probs.iter().enumerate() {
        if class != expected {
            return Err(parse_err(
                path,
                1,
                format!("probability columns must be p0..p{{k-1}}; found p{class} where p{expected} was expected"),
            ));
        }
    }
    if probs.len() < 2 {
        return Err(parse_err(path, 1, "need at least two probability columns"));
    }
    Ok(PredictionHeader {
        label,
        probs: probs.into_iter().map(|(_, col)| col).collect(),
        split,
    })
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = prediction_header(path, &header)?;
    let k = cols.probs.len();

    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut splits = cols.split.map(|_| Vec::new());
    let mut line_numbers = Vec::new();
    let mut bad_labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let y: usize = field(cols.label)
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad label `{}`", field(cols.label))))?;
        if y >= k {
            bad_labels.push(line);
        }
        labels.push(y);
        for &col in &cols.probs {
            let p: f64 = field(col)
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad probability `{}`", field(col))))?;
            probs.push(p);
        }
        if let (Some(col), Some(splits)) = (cols.split, splits.as_mut()) {
            let tag = Split::parse(field(col))
                .ok_or_else(|| parse_err(path, line, format!("bad split tag `{}`", field(col))))?;
            splits.push(tag);
        }
        line_numbers.push(line);
    }

    let probs = ProbabilityMatrix::new_unchecked(k, probs)?;
    let bad_rows = probs.invalid_rows();
    if !bad_rows.is_empty() {
        return Err(Error::Normalization {
            path: path.to_path_buf(),
            rows: bad_rows.into_iter().map(|i| line_numbers[i]).collect(),
        });
    }
    if !bad_labels.is_empty() {
        return Err(Error::FileLabelOutOfRange {
            path: path.to_path_buf(),
            k,
            rows: bad_labels,
        });
    }
    Ok(PredictionData {
        probs,
        labels,
        splits,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => parse_err(
            path,
            line,
            format!("row has {len} fields, header has {expected_len}"),
        ),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

pub fn prediction_csv(
    probs: &ProbabilityMatrix,
    labels: &[usize],
    splits: Option<&[Split]>,
) -> Result<String> {
    if labels.len() != probs.n() {
        return Err(Error::LengthMismatch {
            left: probs.n(),
            right: labels.len(),
        });
    }
    if let Some(s) = splits {
        if s.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: s.len(),
            });
        }
    }
    let mut out = String::from("y");
    for c in 0..probs.k() {
        write!(out, ",p{c}").unwrap();
    }
    if splits.is_some() {
        out.push_str(",split");
    }
    out.push('\n');
    for (i, row) in probs.rows().enumerate() {
        write!(out, "{}", labels[i]).unwrap();
        for &p in row {
            out.push(',');
            out.push_str(&format_float(p));
        }
        if let Some(s) = splits {
            out.push(',');
            out.push_str(s[i].as_str());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_predictions(
    probs: &ProbabilityMatrix,
    labels: &[usize],
    splits: Option<&[Split]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_text(path.as_ref(), &prediction_csv(probs, labels, splits)?)
}

/// Writes through a sibling temp file and a rename.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synth { spec_id: String },
    External { path: String },
}

/// Row assignment for one seed. Indices refer to dataset rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
    /// Held out for tuning external models; unused by the harness.
    #[serde(default)]
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub k: usize,
    pub n: usize,
    pub source: DatasetSource,
    pub cal_fraction: f64,
    pub test_fraction: f64,
    pub splits: Vec<SeedSplit>,
}

impl DatasetManifest {
    /// Checks seed uniqueness, index bounds and disjointness, and that the
    /// recorded fractions match the run configuration.
    pub fn validate(&self, cal_fraction: f64, test_fraction: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{}: {m}", self.dataset_id)));
        if (self.cal_fraction - cal_fraction).abs() > 1e-12
            || (self.test_fraction - test_fraction).abs() > 1e-12
        {
            return bad(format!(
                "manifest fractions cal={} test={} differ from config cal={cal_fraction} test={test_fraction}",
                self.cal_fraction, self.test_fraction
            ));
        }
        let mut seeds = BTreeSet::new();
        for s in &self.splits {
            if !seeds.insert(s.seed) {
                return bad(format!("seed {} listed twice", s.seed));
            }
            let mut seen = BTreeSet::new();
            for &i in s
                .train
                .iter()
                .chain(&s.cal)
                .chain(&s.test)
                .chain(&s.validation)
            {
                if i >= self.n {
                    return bad(format!("seed {}: row {i} out of range", s.seed));
                }
                if !seen.insert(i) {
                    return bad(format!("seed {}: row {i} assigned twice", s.seed));
                }
            }
        }
        Ok(())
    }

    pub fn seed_split(&self, seed: u64) -> Option<&SeedSplit> {
        self.splits.iter().find(|s| s.seed == seed)
    }
}

pub fn dataset_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for j in 0..ds.d {
        write!(out, "x{j},").unwrap();
    }
    out.push_str("y\n");
    for i in 0..ds.n() {
        for &x in ds.row(i) {
            out.push_str(&format_float(x));
            out.push(',');
        }
        writeln!(out, "{}", ds.labels[i]).unwrap();
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &dataset_csv(ds))
}

/// Reads `x0..x{d-1},y`. `k` is one more than the largest label unless
/// given.
pub fn read_dataset(path: impl AsRef<Path>, k: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = header.len().saturating_sub(1);
    for (j, name) in header.iter().enumerate() {
        let expected = if j == d {
            "y".to_string()
        } else {
            format!("x{j}")
        };
        if name.trim() != expected {
            return Err(parse_err(
                path,
                1,
                format!("column {j} is `{name}`, expected `{expected}`"),
            ));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for j in 0..d {
            let v = record[j].trim();
            features.push(
                v.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad feature `{v}`")))?,
            );
        }
        let v = record[d].trim();
        labels.push(
            v.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad label `{v}`")))?,
        );
    }
    let observed_k = labels.iter().max().map_or(0, |m| m + 1);
    let k = k.unwrap_or(observed_k);
    if observed_k > k {
        return Err(Error::FileLabelOutOfRange {
            path: path.to_path_buf(),
            k,
            rows: labels
                .iter()
                .enumerate()
                .filter(|(_, &y)| y >= k)
                .map(|(i, _)| i + 2)
                .collect(),
        });
    }
    Ok(Dataset {
        d,
        k,
        features,
        latent: None,
        labels,
        origin: Origin::External(path.display().to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub specs: Vec<SynthSpec>,
}
