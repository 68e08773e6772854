//! Synthetic stress-test datasets with a known Bayes posterior.
//!
//! Class-conditionals are unit-variance isotropic Gaussians whose means sit
//! on a regular simplex with edge length `sep`, embedded in the first
//! `k - 1` coordinates of `R^d`. Recorded labels are flipped, with
//! probability `label_noise`, to a uniformly chosen other class. A
//! lognormal skew optionally maps every observed coordinate through
//! `x -> exp(x / 2)`; the latent Gaussian coordinates are kept so the
//! closed-form posterior stays available.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conformal::{argmax, ProbabilityMatrix};
use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 10;
pub const LDA_SHRINKAGE: f64 = 1e-3;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skew {
    None,
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub id: String,
    pub k: usize,
    pub d: usize,
    pub n: usize,
    /// Distance between any two class means, in within-class std units.
    pub sep: f64,
    pub label_noise: f64,
    pub skew: Skew,
    pub class_priors: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// Spec with uniform class priors.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        id: impl Into<String>,
        k: usize,
        d: usize,
        n: usize,
        sep: f64,
        label_noise: f64,
        skew: Skew,
        seed: u64,
    ) -> Self {
        Self {
            id: id.into(),
            k,
            d,
            n,
            sep,
            label_noise,
            skew,
            class_priors: vec![1.0 / k as f64; k],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(format!("{}: {m}", self.id)));
        if !(2..=MAX_CLASSES).contains(&self.k) {
            return bad(format!("k = {} outside 2..={MAX_CLASSES}", self.k));
        }
        if self.d + 1 < self.k {
            return bad(format!(
                "d = {} cannot hold {} simplex means",
                self.d, self.k
            ));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.sep.is_finite() && self.sep > 0.0) {
            return bad(format!("sep = {} must be finite and > 0", self.sep));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!(
                "label_noise = {} outside [0, 0.5)",
                self.label_noise
            ));
        }
        if self.class_priors.len() != self.k {
            return bad(format!(
                "{} priors for {} classes",
                self.class_priors.len(),
                self.k
            ));
        }
        if self
            .class_priors
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return bad("priors must be finite and nonnegative".into());
        }
        if (self.class_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("priors must sum to 1".into());
        }
        Ok(())
    }

    /// Class means, row-major `k x d`.
    pub fn class_means(&self) -> Vec<f64> {
        simplex_means(self.k, self.d, self.sep)
    }
}

/// Regular simplex of `k` vertices with edge `sep`, zero-padded to `d`
/// coordinates. Vertex `y` takes its coordinates from the Helmert basis of
/// the sum-zero subspace, which places the centroid at the origin.
pub fn simplex_means(k: usize, d: usize, sep: f64) -> Vec<f64> {
    let scale = sep / std::f64::consts::SQRT_2;
    let mut means = vec![0.0; k * d];
    for y in 0..k {
        for j in 1..k {
            let norm = ((j * (j + 1)) as f64).sqrt();
            let h = match y.cmp(&j) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -(j as f64) / norm,
                std::cmp::Ordering::Greater => 0.0,
            };
            means[y * d + j - 1] = scale * h;
        }
    }
    means
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Synth(SynthSpec),
    External(String),
}

/// Row-major feature matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub k: usize,
    pub features: Vec<f64>,
    /// Pre-skew Gaussian coordinates; `None` when observed features are
    /// already latent or the origin is external.
    pub latent: Option<Vec<f64>>,
    pub labels: Vec<usize>,
    pub origin: Origin,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Coordinates the Bayes posterior is defined on.
    pub fn latent_features(&self) -> &[f64] {
        self.latent.as_deref().unwrap_or(&self.features)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let pick = |m: &[f64]| {
            indices
                .iter()
                .flat_map(|&i| m[i * self.d..(i + 1) * self.d].iter().copied())
                .collect::<Vec<f64>>()
        };
        Dataset {
            d: self.d,
            k: self.k,
            features: pick(&self.features),
            latent: self.latent.as_deref().map(pick),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origin: self.origin.clone(),
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (k, d, n) = (spec.k, spec.d, spec.n);
    let means = spec.class_means();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_dist = WeightedIndex::new(&spec.class_priors)
        .map_err(|e| Error::InvalidSpec(format!("{}: priors: {e}", spec.id)))?;

    let mut latent = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let clean = class_dist.sample(&mut rng);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            latent.push(means[clean * d + j] + z);
        }
        let noisy: f64 = rng.random();
        let label = if noisy < spec.label_noise {
            let other = rng.random_range(0..k - 1);
            if other >= clean {
                other + 1
            } else {
                other
            }
        } else {
            clean
        };
        labels.push(label);
    }

    let (features, latent) = match spec.skew {
        Skew::None => (latent, None),
        Skew::Lognormal => (
            latent.iter().map(|x| (x / 2.0).exp()).collect(),
            Some(latent),
        ),
    };
    Ok(Dataset {
        d,
        k,
        features,
        latent,
        labels,
        origin: Origin::Synth(spec.clone()),
    })
}

/// Exact posterior of the recorded (noisy) label given latent coordinates.
pub fn oracle_posterior(spec: &SynthSpec, latent: &[f64]) -> Result<ProbabilityMatrix> {
    spec.validate()?;
    let (k, d) = (spec.k, spec.d);
    if !latent.len().is_multiple_of(d) {
        return Err(Error::InvalidSpec(format!(
            "{}: {} feature values is not a multiple of d = {d}",
            spec.id,
            latent.len()
        )));
    }
    let means = spec.class_means();
    let log_priors: Vec<f64> = spec.class_priors.iter().map(|p| p.ln()).collect();
    let rho = spec.label_noise;

    let mut out = Vec::with_capacity(latent.len() / d * k);
    let mut logits = vec![0.0; k];
    for x in latent.chunks_exact(d) {
        for (y, logit) in logits.iter_mut().enumerate() {
            let sq: f64 = x
                .iter()
                .zip(&means[y * d..(y + 1) * d])
                .map(|(a, m)| (a - m) * (a - m))
                .sum();
            *logit = log_priors[y] - 0.5 * sq;
        }
        let clean = softmax(&logits);
        out.extend(
            clean
                .iter()
                .map(|&p| (1.0 - rho) * p + rho * (1.0 - p) / (k - 1) as f64),
        );
    }
    ProbabilityMatrix::new(k, out)
}

/// Numerically stable softmax; `-inf` logits get probability zero.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sharpens (`temperature < 1`) or flattens (`> 1`) each row:
/// `p_y^(1/T)`, renormalized. Entries are floored at 1e-12 first.
pub fn distort(probs: &ProbabilityMatrix, temperature: f64) -> Result<ProbabilityMatrix> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    let mut out = Vec::with_capacity(probs.as_slice().len());
    for row in probs.rows() {
        let logits: Vec<f64> = row
            .iter()
            .map(|p| p.clamp(PROB_FLOOR, 1.0).ln() / temperature)
            .collect();
        out.extend(softmax(&logits));
    }
    ProbabilityMatrix::new(probs.k(), out)
}

/// Pooled-covariance Gaussian discriminant.
#[derive(Debug, Clone)]
pub struct Lda {
    d: usize,
    k: usize,
    /// `Sigma^-1 mu_y` per class, row-major `k x d`.
    weights: Vec<f64>,
    /// `log pi_y - mu_y' Sigma^-1 mu_y / 2`.
    offsets: Vec<f64>,
}

pub fn fit_lda(train: &Dataset) -> Result<Lda> {
    Lda::fit(&train.features, train.d, &train.labels, train.k)
}

impl Lda {
    pub fn fit(features: &[f64], d: usize, labels: &[usize], k: usize) -> Result<Self> {
        let n = labels.len();
        if features.len() != n * d {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: n * d,
            });
        }
        if let Some(row) = labels.iter().position(|&y| y >= k) {
            return Err(Error::LabelOutOfRange {
                row,
                label: labels[row],
                k,
            });
        }
        let mut counts = vec![0usize; k];
        let mut means = DMatrix::<f64>::zeros(d, k);
        for (x, &y) in features.chunks_exact(d).zip(labels) {
            counts[y] += 1;
            for j in 0..d {
                means[(j, y)] += x[j];
            }
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass(missing));
        }
        for (y, &count) in counts.iter().enumerate() {
            let c = count as f64;
            means.column_mut(y).iter_mut().for_each(|m| *m /= c);
        }

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = DVector::<f64>::zeros(d);
        for (x, &y) in features.chunks_exact(d).zip(labels) {
            for j in 0..d {
                centered[j] = x[j] - means[(j, y)];
            }
            cov.ger(1.0, &centered, &centered, 1.0);
        }
        let dof = n.saturating_sub(k).max(1) as f64;
        cov /= dof;
        let shrunk = cov * (1.0 - LDA_SHRINKAGE) + DMatrix::identity(d, d) * LDA_SHRINKAGE;
        if shrunk.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let chol = shrunk.cholesky().ok_or(Error::SingularCovariance)?;
        let solved = chol.solve(&means);

        let mut weights = Vec::with_capacity(k * d);
        let mut offsets = Vec::with_capacity(k);
        for (y, &count) in counts.iter().enumerate() {
            let w = solved.column(y);
            weights.extend(w.iter().copied());
            let prior = count as f64 / n as f64;
            offsets.push(prior.ln() - 0.5 * w.dot(&means.column(y)));
        }
        Ok(Self {
            d,
            k,
            weights,
            offsets,
        })
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<ProbabilityMatrix> {
        if !features.len().is_multiple_of(self.d) {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: self.d,
            });
        }
        let mut out = Vec::with_capacity(features.len() / self.d * self.k);
        let mut logits = vec![0.0; self.k];
        for x in features.chunks_exact(self.d) {
            for (y, logit) in logits.iter_mut().enumerate() {
                let w = &self.weights[y * self.d..(y + 1) * self.d];
                *logit = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.offsets[y];
            }
            out.extend(softmax(&logits));
        }
        ProbabilityMatrix::new(self.k, out)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<usize>> {
        let p = self.predict_proba(features)?;
        Ok(p.rows().map(argmax).collect())
    }
}

/// The shipped 20-dataset stress suite: every combination of
/// `sep in {0.5, 1.0}`, `label_noise in {0.2, 0.4}`, `k in {2, 4, 10}`
/// without skew, plus the lognormal-skewed variants for `k in {2, 4}`.
pub fn default_manifest() -> Vec<SynthSpec> {
    let mut specs = Vec::with_capacity(20);
    let mut push = |k: usize, sep: f64, noise: f64, skew: Skew| {
        let tag = match skew {
            Skew::None => "gauss",
            Skew::Lognormal => "lognormal",
        };
        let seed = 20_000 + specs.len() as u64;
        specs.push(SynthSpec::uniform(
            format!("synth-k{k}-sep{sep:.1}-noise{noise:.1}-{tag}"),
            k,
            k + 2,
            3000,
            sep,
            noise,
            skew,
            seed,
        ));
    };
    for skew in [Skew::None, Skew::Lognormal] {
        for k in [2, 4, 10] {
            if skew == Skew::Lognormal && k == 10 {
                continue;
            }
            for sep in [0.5, 1.0] {
                for noise in [0.2, 0.4] {
                    push(k, sep, noise, skew);
                }
            }
        }
    }
    specs
}
