//! Synthetic logit distributions with closed-form posteriors, exactly
//! calibrated label samplers, and controlled miscalibrations.
//!
//! Class-conditional logits are isotropic Gaussians, so the posterior
//! `P(y | z)` is a softmax of an affine function of `z` and can be
//! evaluated exactly. With means `s * e_y`, uniform priors, and variance
//! `sigma^2 = s`, the posterior is exactly `softmax(z)`: such datasets are
//! perfectly calibrated for the identity calibrator, and every controlled
//! distortion of them has a known correction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibrators::{Calibrator, CalibratorKind};
use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::network::nll_loss;

/// A parametric joint distribution over (logits, labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub class_priors: Vec<f64>,
    /// One mean vector per class, each of dimension `n_classes`.
    pub class_means: Vec<Vec<f64>>,
    /// Shared isotropic variance.
    pub sigma2: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes;
        if n < 2 {
            return Err(Error::validation("synthetic spec needs at least 2 classes"));
        }
        if self.class_priors.len() != n {
            return Err(Error::validation("one prior per class required"));
        }
        if self.class_priors.iter().any(|p| !(p > &0.0 && p.is_finite())) {
            return Err(Error::validation("priors must be positive and finite"));
        }
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "priors sum to {sum}, expected 1 within 1e-12"
            )));
        }
        if self.class_means.len() != n || self.class_means.iter().any(|m| m.len() != n) {
            return Err(Error::validation(
                "class means must form an n_classes x n_classes matrix",
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::validation("sigma^2 must be positive and finite"));
        }
        Ok(())
    }

    /// The spec whose posterior is exactly `softmax(z)`: means
    /// `separation * e_y`, uniform priors, `sigma^2 = separation`.
    pub fn identity_calibrated(n_classes: usize, separation: f64, seed: u64) -> Self {
        let mut class_means = vec![vec![0.0; n_classes]; n_classes];
        for (y, mean) in class_means.iter_mut().enumerate() {
            mean[y] = separation;
        }
        Self {
            n_classes,
            class_priors: vec![1.0 / n_classes as f64; n_classes],
            class_means,
            sigma2: separation,
            seed,
        }
    }
}

/// Closed-form posterior of a [`SyntheticSpec`]: by Bayes' rule for
/// isotropic Gaussians,
/// `P(y | z) = softmax_y(<z, mu_y>/sigma^2 - |mu_y|^2/(2 sigma^2) + log prior_y)`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    means: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    inv_sigma2: f64,
}

impl GaussianPosterior {
    pub fn from_spec(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let inv_sigma2 = 1.0 / spec.sigma2;
        let offsets = spec
            .class_means
            .iter()
            .zip(&spec.class_priors)
            .map(|(mu, prior)| {
                let norm2: f64 = mu.iter().map(|v| v * v).sum();
                prior.ln() - 0.5 * norm2 * inv_sigma2
            })
            .collect();
        Ok(Self { means: spec.class_means.clone(), offsets, inv_sigma2 })
    }

    /// `P(. | z)` as a simplex vector.
    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut logits = Vec::with_capacity(self.means.len());
        for (mu, off) in self.means.iter().zip(&self.offsets) {
            let dot: f64 = mu.iter().zip(z).map(|(a, b)| a * b).sum();
            logits.push(dot * self.inv_sigma2 + off);
        }
        let mut out = vec![0.0; logits.len()];
        crate::network::softmax_into(&logits, &mut out);
        out
    }

    /// Posterior rows for a whole dataset.
    pub fn eval_dataset(&self, dataset: &LogitDataset) -> Vec<f64> {
        let m = dataset.logit_dim();
        let mut out = Vec::with_capacity(dataset.len() * m);
        let z = dataset.logits_f64();
        for b in 0..dataset.len() {
            out.extend_from_slice(&self.eval(&z[b * m..(b + 1) * m]));
        }
        out
    }
}

/// Draw `n` samples: `y ~ priors`, `z ~ Gaussian(mean_y, sigma^2 I)`.
/// Returns the dataset together with its exact posterior.
pub fn synth_sample(spec: &SyntheticSpec, n: usize) -> Result<(LogitDataset, GaussianPosterior)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::validation("sample count must be positive"));
    }
    let posterior = GaussianPosterior::from_spec(spec)?;
    let m = spec.n_classes;
    let sigma = spec.sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    for p in &spec.class_priors {
        acc += p;
        cumulative.push(acc);
    }
    let mut logits = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let y = cumulative.iter().position(|&c| u < c).unwrap_or(m - 1);
        let mean = &spec.class_means[y];
        for j in 0..m {
            let g: f64 = rng.sample(StandardNormal);
            logits.push((mean[j] + sigma * g) as f32);
        }
        labels.push(y as u32);
    }
    Ok((LogitDataset::new(logits, labels, m, m)?, posterior))
}

/// Sample one label per row from the given simplex rows; the resulting
/// prediction is multiclass-calibrated by construction.
pub fn calibrated_sampler(probs: &[f64], n_classes: usize, seed: u64) -> Vec<u32> {
    let batch = probs.len() / n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &probs[b * n_classes..(b + 1) * n_classes];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = n_classes - 1;
        for (y, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = y;
                break;
            }
        }
        labels.push(chosen as u32);
    }
    labels
}

/// A controlled, invertible distortion of a dataset's logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Miscalibration {
    /// `z <- T * z`, so that temperature fitting should recover `T`.
    Temperature { temperature: f64 },
    /// `z <- A z + b` with invertible `A`.
    Affine { matrix: Vec<Vec<f64>>, bias: Vec<f64> },
    /// Componentwise strictly increasing map `z <- scale * z + cubic * z^3`.
    Monotone { scale: f64, cubic: f64 },
}

impl Miscalibration {
    fn validate(&self, m: usize) -> Result<()> {
        match self {
            Miscalibration::Temperature { temperature } => {
                if !(temperature > &0.0 && temperature.is_finite()) {
                    return Err(Error::validation("temperature must be positive and finite"));
                }
            }
            Miscalibration::Affine { matrix, bias } => {
                if matrix.len() != m || matrix.iter().any(|r| r.len() != m) || bias.len() != m {
                    return Err(Error::validation("affine distortion must be m x m with m bias"));
                }
                if !is_invertible(matrix) {
                    return Err(Error::validation("affine distortion matrix is singular"));
                }
            }
            Miscalibration::Monotone { scale, cubic } => {
                if !(scale > &0.0 && scale.is_finite()) || !(cubic >= &0.0 && cubic.is_finite()) {
                    return Err(Error::validation(
                        "monotone distortion needs scale > 0 and cubic >= 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

// Rank check via Gaussian elimination with partial pivoting.
fn is_invertible(matrix: &[Vec<f64>]) -> bool {
    let m = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[pivot][col].abs() < 1e-12 * scale {
            return false;
        }
        a.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    true
}

/// Apply a distortion to every logit row; labels are unchanged.
pub fn miscalibrate(dataset: &LogitDataset, spec: &Miscalibration) -> Result<LogitDataset> {
    let m = dataset.logit_dim();
    spec.validate(m)?;
    let z = dataset.logits_f64();
    let mut out = Vec::with_capacity(z.len());
    match spec {
        Miscalibration::Temperature { temperature } => {
            out.extend(z.iter().map(|v| (v * temperature) as f32));
        }
        Miscalibration::Affine { matrix, bias } => {
            for b in 0..dataset.len() {
                let row = &z[b * m..(b + 1) * m];
                for i in 0..m {
                    let mut acc = bias[i];
                    for j in 0..m {
                        acc += matrix[i][j] * row[j];
                    }
                    out.push(acc as f32);
                }
            }
        }
        Miscalibration::Monotone { scale, cubic } => {
            out.extend(z.iter().map(|v| (scale * v + cubic * v * v * v) as f32));
        }
    }
    LogitDataset::new(out, dataset.labels().to_vec(), m, dataset.n_classes())
}

/// The event whose conditional probability is estimated per score bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorTarget {
    /// Label equals the r-th ranked class; score is the r-th top score.
    TopR(usize),
    /// Label is among the top r classes; score is their summed mass.
    WithinTopR(usize),
    /// Label equals the fixed class; score is that class's probability.
    Class(usize),
}

/// One bin of an empirical posterior estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PosteriorBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub mean_score: f64,
    pub event_frequency: f64,
    pub count: usize,
}

/// Histogram estimate of `P(event | score)`: bins samples by the relevant
/// score and reports the empirical event frequency per bin. For a
/// calibrated predictor the frequency tracks the bin's mean score.
pub fn binned_posterior_estimate(
    pred: &Prediction,
    target: PosteriorTarget,
    bins: usize,
) -> Result<Vec<PosteriorBin>> {
    if bins == 0 {
        return Err(Error::validation("bin count must be positive"));
    }
    if pred.len() < bins {
        return Err(Error::validation(format!(
            "need at least as many samples ({}) as bins ({bins})",
            pred.len()
        )));
    }
    let n = pred.n_classes();
    let check_rank = |r: usize| -> Result<()> {
        if r == 0 || r > n {
            return Err(Error::validation(format!("rank {r} out of range for {n} classes")));
        }
        Ok(())
    };

    let mut score_sum = vec![0.0f64; bins];
    let mut event_sum = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for i in 0..pred.len() {
        let row = pred.row(i);
        let label = pred.labels()[i] as usize;
        let (score, event) = match target {
            PosteriorTarget::TopR(r) => {
                check_rank(r)?;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                (row[order[r - 1]], label == order[r - 1])
            }
            PosteriorTarget::WithinTopR(r) => {
                check_rank(r)?;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                let mass: f64 = order[..r].iter().map(|&c| row[c]).sum();
                (mass, order[..r].contains(&label))
            }
            PosteriorTarget::Class(y) => {
                if y >= n {
                    return Err(Error::validation(format!(
                        "class {y} out of range for {n} classes"
                    )));
                }
                (row[y], label == y)
            }
        };
        let k = ((score * bins as f64) as usize).min(bins - 1);
        score_sum[k] += score;
        event_sum[k] += f64::from(event);
        counts[k] += 1;
    }
    Ok((0..bins)
        .map(|k| {
            let c = counts[k];
            PosteriorBin {
                bin_low: k as f64 / bins as f64,
                bin_high: (k + 1) as f64 / bins as f64,
                mean_score: if c > 0 { score_sum[k] / c as f64 } else { 0.0 },
                event_frequency: if c > 0 { event_sum[k] / c as f64 } else { 0.0 },
                count: c,
            }
        })
        .collect())
}

/// Full-batch NLL gradient norm of a fitted g-layer calibrator at its
/// parameters. A small norm certifies approximate optimality within the
/// family, which certifies approximate calibration on the fitting
/// distribution.
pub fn stationarity_check(calibrator: &Calibrator, dataset: &LogitDataset) -> Result<f64> {
    let network = match calibrator.kind() {
        CalibratorKind::GLayers { network } => network,
        other => {
            return Err(Error::validation(format!(
                "stationarity check requires a g-layer calibrator, got {}",
                Calibrator::unfitted(other.clone()).kind_name()
            )))
        }
    };
    if !calibrator.is_fitted() {
        return Err(Error::State("stationarity check requires a fitted calibrator".into()));
    }
    if dataset.is_empty() {
        return Err(Error::validation("stationarity check needs at least one sample"));
    }
    let trace = network.forward(&dataset.logits_f64(), dataset.len())?;
    let grads = network.backward(&trace, dataset.labels())?;
    Ok(grads.norm())
}

/// Structural identity behind the loss bookkeeping: the empirical NLL is
/// the same whether iterated per sample index or over collected (z, y)
/// pairs.
pub fn nll_two_ways(dataset: &LogitDataset, probs: &[f64]) -> (f64, f64) {
    let n = dataset.n_classes();
    let by_index = nll_loss(probs, n, dataset.labels()).expect("consistent shapes");
    let pairs: Vec<(usize, u32)> = (0..dataset.len()).map(|i| (i, dataset.label(i))).collect();
    let mut total = 0.0;
    for (i, y) in &pairs {
        total -= probs[i * n + *y as usize].ln();
    }
    (by_index, total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_two_class_posterior_at_origin() {
        let spec = SyntheticSpec {
            n_classes: 2,
            class_priors: vec![0.5, 0.5],
            class_means: vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
            sigma2: 1.0,
            seed: 0,
        };
        let posterior = GaussianPosterior::from_spec(&spec).unwrap();
        let p = posterior.eval(&[0.0, 0.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let spec = SyntheticSpec::identity_calibrated(5, 1.0, 3);
        let (ds, posterior) = synth_sample(&spec, 200).unwrap();
        let rows = posterior.eval_dataset(&ds);
        for row in rows.chunks_exact(5) {
            let sum: f64 = row.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_calibrated_posterior_is_softmax_of_z() {
        let spec = SyntheticSpec::identity_calibrated(4, 2.0, 9);
        let posterior = GaussianPosterior::from_spec(&spec).unwrap();
        let z = [0.4, -1.0, 2.2, 0.0];
        let p = posterior.eval(&z);
        let s = crate::network::softmax(&z).unwrap();
        for (a, b) in p.iter().zip(&s) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let spec = SyntheticSpec::identity_calibrated(3, 1.0, 11);
        let (a, _) = synth_sample(&spec, 50).unwrap();
        let (b, _) = synth_sample(&spec, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibrated_sampler_degenerate_rows() {
        let probs = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let labels = calibrated_sampler(&probs, 3, 5);
        assert_eq!(labels, vec![2, 2]);
    }

    #[test]
    fn calibrated_sampler_seeded() {
        let probs = vec![0.25; 40];
        assert_eq!(calibrated_sampler(&probs, 4, 7), calibrated_sampler(&probs, 4, 7));
    }

    #[test]
    fn miscalibrate_temperature_identity() {
        let spec = SyntheticSpec::identity_calibrated(3, 1.0, 2);
        let (ds, _) = synth_sample(&spec, 20).unwrap();
        let same = miscalibrate(&ds, &Miscalibration::Temperature { temperature: 1.0 }).unwrap();
        assert_eq!(same, ds);
    }

    #[test]
    fn miscalibrate_affine_identity() {
        let spec = SyntheticSpec::identity_calibrated(2, 1.0, 2);
        let (ds, _) = synth_sample(&spec, 10).unwrap();
        let id = Miscalibration::Affine {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(miscalibrate(&ds, &id).unwrap(), ds);
    }

    #[test]
    fn singular_affine_rejected() {
        let spec = SyntheticSpec::identity_calibrated(2, 1.0, 2);
        let (ds, _) = synth_sample(&spec, 10).unwrap();
        let bad = Miscalibration::Affine {
            matrix: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            bias: vec![0.0, 0.0],
        };
        assert!(miscalibrate(&ds, &bad).is_err());
    }

    #[test]
    fn binned_estimate_confident_predictor() {
        let mut probs = Vec::new();
        for _ in 0..20 {
            probs.extend_from_slice(&[1.0, 0.0]);
        }
        let pred = Prediction::new(probs, 2, vec![0; 20]).unwrap();
        let table = binned_posterior_estimate(&pred, PosteriorTarget::TopR(1), 10).unwrap();
        let occupied: Vec<&PosteriorBin> = table.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].event_frequency, 1.0);
        assert_eq!(occupied[0].count, 20);
    }

    #[test]
    fn binned_estimate_within_top_n_is_total() {
        let probs = vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.4, 0.4, 0.2, 0.25, 0.5, 0.25];
        let pred = Prediction::new(probs, 3, vec![0, 1, 2, 0]).unwrap();
        let table = binned_posterior_estimate(&pred, PosteriorTarget::WithinTopR(3), 4).unwrap();
        for bin in table.iter().filter(|b| b.count > 0) {
            assert_eq!(bin.event_frequency, 1.0);
        }
    }

    #[test]
    fn stationarity_check_guards() {
        let c = Calibrator::temperature(2.0).unwrap();
        let spec = SyntheticSpec::identity_calibrated(3, 1.0, 2);
        let (ds, _) = synth_sample(&spec, 10).unwrap();
        assert!(stationarity_check(&c, &ds).is_err());
    }

    #[test]
    fn nll_identical_under_iteration_order() {
        let spec = SyntheticSpec::identity_calibrated(3, 1.0, 8);
        let (ds, _) = synth_sample(&spec, 64).unwrap();
        let probs = Calibrator::identity()
            .transform_batch(&ds.logits_f64(), ds.len(), 3)
            .unwrap();
        let (a, b) = nll_two_ways(&ds, &probs);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empirical_class_frequencies_match_priors() {
        let spec = SyntheticSpec {
            n_classes: 3,
            class_priors: vec![0.5, 0.3, 0.2],
            class_means: SyntheticSpec::identity_calibrated(3, 1.0, 0).class_means,
            sigma2: 1.0,
            seed: 21,
        };
        let n = 100_000;
        let (ds, _) = synth_sample(&spec, n).unwrap();
        for (y, &p) in spec.class_priors.iter().enumerate() {
            let freq =
                ds.labels().iter().filter(|&&l| l as usize == y).count() as f64 / n as f64;
            let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= bound,
                "class {y}: freq {freq}, prior {p}, bound {bound}"
            );
        }
    }
}
