//! Post-hoc calibration maps behind one interface: identity
//! (uncalibrated), temperature scaling, vector scaling, matrix scaling
//! with off-diagonal regularization, and the dense g-layer calibrator.
//!
//! Every family is initialized at the identity, so for each of them the
//! fitted calibration-set NLL never exceeds the uncalibrated NLL.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LogitDataset;
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::network::{softmax_into, GLayerNetwork};
use crate::training::{
    cross_validate, fit, CvTable, HyperGrid, HyperParams, OptimizerKind, TrainConfig, TrainLog,
};

/// The calibration map family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibratorKind {
    Identity,
    Temperature { temperature: f64 },
    Vector { weights: Vec<f64>, bias: Vec<f64> },
    Matrix { weights: Vec<Vec<f64>>, bias: Vec<f64>, lambda_offdiag: f64 },
    GLayers { network: GLayerNetwork },
}

impl CalibratorKind {
    fn name(&self) -> &'static str {
        match self {
            CalibratorKind::Identity => "identity",
            CalibratorKind::Temperature { .. } => "temperature",
            CalibratorKind::Vector { .. } => "vector",
            CalibratorKind::Matrix { .. } => "matrix",
            CalibratorKind::GLayers { .. } => "glayers",
        }
    }
}

/// A calibration map plus its fitted/unfitted state.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    kind: CalibratorKind,
    fitted: bool,
}

impl Calibrator {
    pub fn identity() -> Self {
        Self { kind: CalibratorKind::Identity, fitted: true }
    }

    pub fn temperature(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::validation(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(Self { kind: CalibratorKind::Temperature { temperature }, fitted: true })
    }

    pub fn vector(weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != bias.len() || weights.is_empty() {
            return Err(Error::validation("vector calibrator needs matching weight/bias lengths"));
        }
        Ok(Self { kind: CalibratorKind::Vector { weights, bias }, fitted: true })
    }

    pub fn matrix(weights: Vec<Vec<f64>>, bias: Vec<f64>, lambda_offdiag: f64) -> Result<Self> {
        let m = bias.len();
        if m == 0 || weights.len() != m || weights.iter().any(|r| r.len() != m) {
            return Err(Error::validation("matrix calibrator needs a square weight matrix"));
        }
        if !(lambda_offdiag >= 0.0 && lambda_offdiag.is_finite()) {
            return Err(Error::validation("lambda_offdiag must be non-negative and finite"));
        }
        Ok(Self { kind: CalibratorKind::Matrix { weights, bias, lambda_offdiag }, fitted: true })
    }

    pub fn glayers(network: GLayerNetwork) -> Self {
        Self { kind: CalibratorKind::GLayers { network }, fitted: true }
    }

    /// A calibrator whose parameters are placeholders; `transform` refuses
    /// it until a fit replaces it.
    pub fn unfitted(kind: CalibratorKind) -> Self {
        Self { kind, fitted: false }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn kind(&self) -> &CalibratorKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.name()
    }

    /// Map a row-major `batch x m` logit block to simplex rows.
    pub fn transform_batch(&self, logits: &[f64], batch: usize, m: usize) -> Result<Vec<f64>> {
        if !self.fitted && !matches!(self.kind, CalibratorKind::Identity) {
            return Err(Error::State(format!(
                "cannot transform through an unfitted {} calibrator",
                self.kind.name()
            )));
        }
        if logits.len() != batch * m || batch == 0 {
            return Err(Error::validation("logit block does not match the declared shape"));
        }
        let mut probs = vec![0.0; batch * m];
        match &self.kind {
            CalibratorKind::Identity => {
                for b in 0..batch {
                    softmax_into(&logits[b * m..(b + 1) * m], &mut probs[b * m..(b + 1) * m]);
                }
            }
            CalibratorKind::Temperature { temperature } => {
                let mut scaled = vec![0.0; m];
                for b in 0..batch {
                    for (s, &z) in scaled.iter_mut().zip(&logits[b * m..(b + 1) * m]) {
                        *s = z / temperature;
                    }
                    softmax_into(&scaled, &mut probs[b * m..(b + 1) * m]);
                }
            }
            CalibratorKind::Vector { weights, bias } => {
                if weights.len() != m {
                    return Err(Error::validation(format!(
                        "vector calibrator has dimension {}, logits have {m}",
                        weights.len()
                    )));
                }
                let mut scaled = vec![0.0; m];
                for b in 0..batch {
                    let row = &logits[b * m..(b + 1) * m];
                    for j in 0..m {
                        scaled[j] = weights[j] * row[j] + bias[j];
                    }
                    softmax_into(&scaled, &mut probs[b * m..(b + 1) * m]);
                }
            }
            CalibratorKind::Matrix { weights, bias, .. } => {
                if bias.len() != m {
                    return Err(Error::validation(format!(
                        "matrix calibrator has dimension {}, logits have {m}",
                        bias.len()
                    )));
                }
                let mut scaled = vec![0.0; m];
                for b in 0..batch {
                    let row = &logits[b * m..(b + 1) * m];
                    for i in 0..m {
                        let mut acc = bias[i];
                        for j in 0..m {
                            acc += weights[i][j] * row[j];
                        }
                        scaled[i] = acc;
                    }
                    softmax_into(&scaled, &mut probs[b * m..(b + 1) * m]);
                }
            }
            CalibratorKind::GLayers { network } => {
                if network.input_dim() != m {
                    return Err(Error::validation(format!(
                        "network expects dimension {}, logits have {m}",
                        network.input_dim()
                    )));
                }
                let trace = network.forward(logits, batch)?;
                probs.copy_from_slice(trace.probs());
            }
        }
        Ok(probs)
    }

    /// Transform a whole dataset into a [`Prediction`].
    pub fn transform_dataset(&self, dataset: &LogitDataset) -> Result<Prediction> {
        let probs = self.transform_batch(
            &dataset.logits_f64(),
            dataset.len(),
            dataset.logit_dim(),
        )?;
        Prediction::new(probs, dataset.n_classes(), dataset.labels().to_vec())
    }

    /// Calibration-set NLL of this calibrator on a dataset.
    pub fn nll_on(&self, dataset: &LogitDataset) -> Result<f64> {
        let probs = self.transform_batch(
            &dataset.logits_f64(),
            dataset.len(),
            dataset.logit_dim(),
        )?;
        crate::network::nll_loss(&probs, dataset.n_classes(), dataset.labels())
    }
}

/// Bounded 1-D search settings for temperature fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSearch {
    pub t_min: f64,
    pub t_max: f64,
    /// Tolerance on log-temperature for the golden-section phase.
    pub tol: f64,
    /// Points in the coarse log-spaced scan used to detect
    /// non-unimodality.
    pub scan_points: usize,
}

impl Default for TemperatureSearch {
    fn default() -> Self {
        Self { t_min: 1e-2, t_max: 1e2, tol: 1e-6, scan_points: 50 }
    }
}

impl TemperatureSearch {
    fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min && self.t_max.is_finite()) {
            return Err(Error::validation("temperature bounds must satisfy 0 < t_min < t_max"));
        }
        if !(self.tol > 0.0) || self.scan_points < 3 {
            return Err(Error::validation("search tolerance must be positive, scan >= 3 points"));
        }
        Ok(())
    }
}

/// Fit temperature scaling by minimizing calibration-set NLL of
/// `softmax(z / T)` over the bounded range, using golden-section search on
/// `log T` with a coarse-scan fallback if the objective turns out not to
/// be unimodal. The result never scores worse than `T = 1`.
pub fn fit_temperature(calib: &LogitDataset, search: &TemperatureSearch) -> Result<Calibrator> {
    search.validate()?;
    if calib.len() < 2 {
        return Err(Error::validation("temperature fitting needs at least 2 samples"));
    }
    let m = calib.logit_dim();
    let z = calib.logits_f64();
    let labels = calib.labels();

    // NLL via log-sum-exp; no probability materialization.
    let nll_at = |t: f64| -> f64 {
        let inv_t = 1.0 / t;
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &z[b * m..(b + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for &v in row {
                max = max.max(v * inv_t);
            }
            let mut sum = 0.0;
            for &v in row {
                sum += (v * inv_t - max).exp();
            }
            total += max + sum.ln() - row[label as usize] * inv_t;
        }
        total / labels.len() as f64
    };

    let golden = |mut lo: f64, mut hi: f64| -> f64 {
        const PHI: f64 = 0.618_033_988_749_894_9;
        let mut c = hi - PHI * (hi - lo);
        let mut d = lo + PHI * (hi - lo);
        let mut fc = nll_at(c.exp());
        let mut fd = nll_at(d.exp());
        while hi - lo > search.tol {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - PHI * (hi - lo);
                fc = nll_at(c.exp());
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + PHI * (hi - lo);
                fd = nll_at(d.exp());
            }
        }
        ((lo + hi) / 2.0).exp()
    };

    let (u_min, u_max) = (search.t_min.ln(), search.t_max.ln());
    let mut best_t = golden(u_min, u_max);
    let mut best_nll = nll_at(best_t);

    // Coarse scan over the whole range; if it beats the golden-section
    // result the objective was not unimodal, so refine inside the scan's
    // winning bracket instead.
    let steps = search.scan_points - 1;
    let scan_u = |i: usize| u_min + (u_max - u_min) * i as f64 / steps as f64;
    let mut scan_best = 0;
    let mut scan_best_nll = f64::INFINITY;
    for i in 0..search.scan_points {
        let v = nll_at(scan_u(i).exp());
        if v < scan_best_nll {
            scan_best_nll = v;
            scan_best = i;
        }
    }
    if scan_best_nll < best_nll - 1e-9 {
        let lo = scan_u(scan_best.saturating_sub(1));
        let hi = scan_u((scan_best + 1).min(steps));
        let refined = golden(lo, hi);
        let refined_nll = nll_at(refined);
        if refined_nll < scan_best_nll {
            best_t = refined;
            best_nll = refined_nll;
        } else {
            best_t = scan_u(scan_best).exp();
            best_nll = scan_best_nll;
        }
    }

    // Never worse than no scaling.
    if 1.0 >= search.t_min && 1.0 <= search.t_max && nll_at(1.0) < best_nll {
        best_t = 1.0;
    }
    Calibrator::temperature(best_t)
}

enum AffineFamily {
    Vector,
    Matrix { lambda_offdiag: f64 },
}

/// Fit vector scaling `softmax(w . z + b)` starting from the identity.
pub fn fit_vector(calib: &LogitDataset, cfg: &TrainConfig) -> Result<Calibrator> {
    fit_affine(calib, AffineFamily::Vector, cfg)
}

/// Fit matrix scaling `softmax(W z + b)` with an off-diagonal penalty
/// `lambda * mean(W_offdiag^2)`, starting from the identity. The penalty
/// is applied as a decoupled proximal shrink each step, which stays stable
/// for arbitrarily large `lambda` and drives the off-diagonal entries to
/// zero in that limit (recovering vector scaling).
pub fn fit_matrix(calib: &LogitDataset, lambda_offdiag: f64, cfg: &TrainConfig) -> Result<Calibrator> {
    if !(lambda_offdiag >= 0.0 && lambda_offdiag.is_finite()) {
        return Err(Error::validation("lambda_offdiag must be non-negative and finite"));
    }
    fit_affine(calib, AffineFamily::Matrix { lambda_offdiag }, cfg)
}

fn fit_affine(calib: &LogitDataset, family: AffineFamily, cfg: &TrainConfig) -> Result<Calibrator> {
    cfg.validate()?;
    let m = calib.logit_dim();
    let n = calib.len();
    let z = calib.logits_f64();
    let labels = calib.labels();

    let n_weights = match family {
        AffineFamily::Vector => m,
        AffineFamily::Matrix { .. } => m * m,
    };
    // Identity start: w = 1 (vector) or W = I (matrix), b = 0.
    let mut weights = vec![0.0; n_weights];
    match family {
        AffineFamily::Vector => weights.iter_mut().for_each(|w| *w = 1.0),
        AffineFamily::Matrix { .. } => (0..m).for_each(|i| weights[i * m + i] = 1.0),
    }
    let mut bias = vec![0.0; m];

    let offdiag_count = (m * m - m) as f64;
    let penalty = |weights: &[f64]| -> f64 {
        match family {
            AffineFamily::Vector => 0.0,
            AffineFamily::Matrix { lambda_offdiag } => {
                if lambda_offdiag == 0.0 {
                    return 0.0;
                }
                let mut sum = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            sum += weights[i * m + j] * weights[i * m + j];
                        }
                    }
                }
                lambda_offdiag * sum / offdiag_count
            }
        }
    };

    let mut probs = vec![0.0; n * m];
    let mut scaled = vec![0.0; m];
    let objective = |weights: &[f64], bias: &[f64], probs: &mut [f64], scaled: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for b in 0..n {
            let row = &z[b * m..(b + 1) * m];
            match family {
                AffineFamily::Vector => {
                    for j in 0..m {
                        scaled[j] = weights[j] * row[j] + bias[j];
                    }
                }
                AffineFamily::Matrix { .. } => {
                    for i in 0..m {
                        let mut acc = bias[i];
                        let w_row = &weights[i * m..(i + 1) * m];
                        for j in 0..m {
                            acc += w_row[j] * row[j];
                        }
                        scaled[i] = acc;
                    }
                }
            }
            let out = &mut probs[b * m..(b + 1) * m];
            softmax_into(scaled, out);
            total -= out[labels[b] as usize].ln();
        }
        total / n as f64 + penalty(weights)
    };

    let mut opt = FlatOptimizer::new(cfg.optimizer, n_weights + m);
    let lr = cfg.learning_rate;
    let decay = (1.0 - lr * cfg.weight_decay).max(0.0);
    let prox = match family {
        AffineFamily::Matrix { lambda_offdiag } if lambda_offdiag > 0.0 => {
            1.0 / (1.0 + lr * 2.0 * lambda_offdiag / offdiag_count)
        }
        _ => 1.0,
    };

    let mut best_weights = weights.clone();
    let mut best_bias = bias.clone();
    let mut best_obj = objective(&weights, &bias, &mut probs, &mut scaled);
    let mut since_best = 0usize;
    let mut grads = vec![0.0; n_weights + m];

    for epoch in 1..=cfg.max_epochs {
        // probs currently hold the forward pass of the latest objective
        // evaluation, which used the current parameters.
        grads.iter_mut().for_each(|g| *g = 0.0);
        let inv_n = 1.0 / n as f64;
        for b in 0..n {
            let row = &z[b * m..(b + 1) * m];
            let p = &probs[b * m..(b + 1) * m];
            let label = labels[b] as usize;
            for i in 0..m {
                let delta = (p[i] - f64::from(i == label)) * inv_n;
                match family {
                    AffineFamily::Vector => {
                        grads[i] += delta * row[i];
                    }
                    AffineFamily::Matrix { .. } => {
                        let g_row = &mut grads[i * m..(i + 1) * m];
                        for j in 0..m {
                            g_row[j] += delta * row[j];
                        }
                    }
                }
                grads[n_weights + i] += delta;
            }
        }

        opt.step(&mut weights, &mut bias, &grads, lr, decay);
        if prox != 1.0 {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        weights[i * m + j] *= prox;
                    }
                }
            }
        }

        let obj = objective(&weights, &bias, &mut probs, &mut scaled);
        if !obj.is_finite() {
            return Err(Error::TrainingDiverged { epoch, learning_rate: lr });
        }
        if obj < best_obj {
            best_obj = obj;
            best_weights.copy_from_slice(&weights);
            best_bias.copy_from_slice(&bias);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    match family {
        AffineFamily::Vector => Calibrator::vector(best_weights, best_bias),
        AffineFamily::Matrix { lambda_offdiag } => {
            let rows = best_weights.chunks_exact(m).map(|r| r.to_vec()).collect();
            Calibrator::matrix(rows, best_bias, lambda_offdiag)
        }
    }
}

// Flat-parameter optimizer mirroring the network updates; weights and bias
// are stored back to back in gradient order.
struct FlatOptimizer {
    kind: OptimizerKind,
    step_count: u64,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl FlatOptimizer {
    fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Self { kind, step_count: 0, m1: vec![0.0; n_params], m2: vec![0.0; n_params] }
    }

    fn step(&mut self, weights: &mut [f64], bias: &mut [f64], grads: &[f64], lr: f64, decay: f64) {
        let nw = weights.len();
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, g) in grads.iter().enumerate() {
                    let p = if i < nw { &mut weights[i] } else { &mut bias[i - nw] };
                    *p = *p * decay - lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                self.step_count += 1;
                let bc1 = 1.0 - beta1.powi(self.step_count as i32);
                let bc2 = 1.0 - beta2.powi(self.step_count as i32);
                for (i, &g) in grads.iter().enumerate() {
                    self.m1[i] = beta1 * self.m1[i] + (1.0 - beta1) * g;
                    self.m2[i] = beta2 * self.m2[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m1[i] / bc1;
                    let v_hat = self.m2[i] / bc2;
                    let p = if i < nw { &mut weights[i] } else { &mut bias[i - nw] };
                    *p = *p * decay - lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Everything produced by a cross-validated g-layer fit.
#[derive(Debug, Clone)]
pub struct GLayersFit {
    pub calibrator: Calibrator,
    pub hyperparams: HyperParams,
    pub cv_table: CvTable,
    pub train_log: TrainLog,
}

/// Cross-validate the grid on the calibration set, then train a
/// transparently initialized network on the full set with the winning
/// hyperparameters, monitoring the training set itself for early
/// stopping.
pub fn fit_glayers(
    calib: &LogitDataset,
    hidden_dims: &[usize],
    grid: &HyperGrid,
    k: usize,
    cfg_base: &TrainConfig,
    jobs: usize,
) -> Result<GLayersFit> {
    let (best, cv_table) = cross_validate(calib, grid, k, hidden_dims, cfg_base, jobs)?;
    let (calibrator, train_log) = fit_glayers_direct(calib, hidden_dims, &best, cfg_base)?;
    Ok(GLayersFit { calibrator, hyperparams: best, cv_table, train_log })
}

/// Train a g-layer calibrator with explicit hyperparameters (no cross
/// validation), e.g. to reuse rates found for another architecture.
pub fn fit_glayers_direct(
    calib: &LogitDataset,
    hidden_dims: &[usize],
    hp: &HyperParams,
    cfg_base: &TrainConfig,
) -> Result<(Calibrator, TrainLog)> {
    let cfg = cfg_base.with_rates(hp);
    let net = GLayerNetwork::transparent_init(calib.logit_dim(), hidden_dims, cfg.seed)?;
    let (trained, log) = fit(&net, calib, calib, &cfg)?;
    Ok((Calibrator::glayers(trained), log))
}

// On-disk JSON envelope. The g-layer network lives in a sidecar GLNW file
// referenced by path (relative paths resolve against the JSON file's
// directory).
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CalibratorFile {
    Identity,
    Temperature { temperature: f64 },
    Vector { weights: Vec<f64>, bias: Vec<f64> },
    Matrix { weights: Vec<Vec<f64>>, bias: Vec<f64>, lambda_offdiag: f64 },
    Glayers { network_path: String },
}

/// Write a fitted calibrator to a JSON checkpoint; a g-layer calibrator
/// also writes its network next to the JSON with the extension `.glnw`.
pub fn save_calibrator(calibrator: &Calibrator, json_path: impl AsRef<Path>) -> Result<()> {
    let json_path = json_path.as_ref();
    if !calibrator.fitted {
        return Err(Error::State("refusing to save an unfitted calibrator".into()));
    }
    let file = match &calibrator.kind {
        CalibratorKind::Identity => CalibratorFile::Identity,
        CalibratorKind::Temperature { temperature } => {
            CalibratorFile::Temperature { temperature: *temperature }
        }
        CalibratorKind::Vector { weights, bias } => {
            CalibratorFile::Vector { weights: weights.clone(), bias: bias.clone() }
        }
        CalibratorKind::Matrix { weights, bias, lambda_offdiag } => CalibratorFile::Matrix {
            weights: weights.clone(),
            bias: bias.clone(),
            lambda_offdiag: *lambda_offdiag,
        },
        CalibratorKind::GLayers { network } => {
            let net_path = json_path.with_extension("glnw");
            network.save(&net_path)?;
            let name = net_path
                .file_name()
                .ok_or_else(|| Error::validation("checkpoint path has no file name"))?
                .to_string_lossy()
                .into_owned();
            CalibratorFile::Glayers { network_path: name }
        }
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::format(format!("cannot serialize calibrator: {e}")))?;
    std::fs::write(json_path, text)?;
    Ok(())
}

/// Load a calibrator checkpoint written by [`save_calibrator`].
pub fn load_calibrator(json_path: impl AsRef<Path>) -> Result<Calibrator> {
    let json_path = json_path.as_ref();
    let text = std::fs::read_to_string(json_path)?;
    let file: CalibratorFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("bad calibrator JSON: {e}")))?;
    Ok(match file {
        CalibratorFile::Identity => Calibrator::identity(),
        CalibratorFile::Temperature { temperature } => Calibrator::temperature(temperature)?,
        CalibratorFile::Vector { weights, bias } => Calibrator::vector(weights, bias)?,
        CalibratorFile::Matrix { weights, bias, lambda_offdiag } => {
            Calibrator::matrix(weights, bias, lambda_offdiag)?
        }
        CalibratorFile::Glayers { network_path } => {
            let mut path = std::path::PathBuf::from(&network_path);
            if path.is_relative() {
                path = json_path.parent().unwrap_or(Path::new(".")).join(path);
            }
            Calibrator::glayers(GLayerNetwork::load(path)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ds(logits: Vec<f32>, labels: Vec<u32>, m: usize) -> LogitDataset {
        LogitDataset::new(logits, labels, m, m).unwrap()
    }

    #[test]
    fn temperature_one_matches_identity() {
        let logits = [0.3f64, -1.2, 2.0, 0.0, 0.5, -0.5];
        let id = Calibrator::identity().transform_batch(&logits, 2, 3).unwrap();
        let t1 = Calibrator::temperature(1.0)
            .unwrap()
            .transform_batch(&logits, 2, 3)
            .unwrap();
        for (a, b) in id.iter().zip(&t1) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_temperature_flattens() {
        let p = Calibrator::temperature(1e9)
            .unwrap()
            .transform_batch(&[3.0, 0.0], 1, 2)
            .unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn identity_matrix_equals_identity_calibrator() {
        let logits = [1.0f64, -2.0, 0.5, 0.0, 0.0, 3.0];
        let id = Calibrator::identity().transform_batch(&logits, 2, 3).unwrap();
        let mat = Calibrator::matrix(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![0.0; 3],
            0.0,
        )
        .unwrap()
        .transform_batch(&logits, 2, 3)
        .unwrap();
        assert_eq!(id, mat);
    }

    #[test]
    fn unfitted_calibrator_is_a_state_error() {
        let c = Calibrator::unfitted(CalibratorKind::Temperature { temperature: 1.0 });
        let err = c.transform_batch(&[0.0, 0.0], 1, 2).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(Calibrator::temperature(0.0).is_err());
        assert!(Calibrator::temperature(-2.0).is_err());
        assert!(Calibrator::temperature(f64::NAN).is_err());
    }

    #[test]
    fn fit_temperature_degenerate_two_samples() {
        let d = ds(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2);
        let c = fit_temperature(&d, &TemperatureSearch::default()).unwrap();
        match c.kind() {
            CalibratorKind::Temperature { temperature } => {
                assert!(*temperature >= 1e-2 && *temperature <= 1e2);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn fit_temperature_never_worse_than_one() {
        let d = ds(
            vec![2.0, 0.0, 1.5, 0.5, 0.0, 2.0, 0.3, 0.1],
            vec![0, 1, 1, 0],
            2,
        );
        let fitted = fit_temperature(&d, &TemperatureSearch::default()).unwrap();
        let t1 = Calibrator::temperature(1.0).unwrap();
        assert!(fitted.nll_on(&d).unwrap() <= t1.nll_on(&d).unwrap() + 1e-12);
    }

    #[test]
    fn fit_vector_zero_epochs_is_identity_transform() {
        let d = ds(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let c = fit_vector(&d, &cfg).unwrap();
        match c.kind() {
            CalibratorKind::Vector { weights, bias } => {
                assert_eq!(weights, &vec![1.0, 1.0]);
                assert_eq!(bias, &vec![0.0, 0.0]);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn fit_matrix_zero_epochs_is_identity_transform() {
        let d = ds(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let c = fit_matrix(&d, 1e-2, &cfg).unwrap();
        let logits = [0.7f64, -0.3, 0.0, 1.1];
        let out = c.transform_batch(&logits, 2, 2).unwrap();
        let id = Calibrator::identity().transform_batch(&logits, 2, 2).unwrap();
        assert_eq!(out, id);
    }

    #[test]
    fn glayers_empty_hidden_is_single_affine_layer() {
        let d = ds(vec![2.0, 0.0, 0.0, 2.0, 1.0, 1.0], vec![0, 1, 0], 2);
        let hp = HyperParams { learning_rate: 1e-2, weight_decay: 0.0 };
        let cfg = TrainConfig { max_epochs: 5, patience: 5, ..TrainConfig::default() };
        let (c, _) = fit_glayers_direct(&d, &[], &hp, &cfg).unwrap();
        match c.kind() {
            CalibratorKind::GLayers { network } => {
                assert_eq!(network.layers().len(), 1);
                assert_eq!(network.layers()[0].in_dim(), 2);
                assert_eq!(network.layers()[0].out_dim(), 2);
                assert!(!network.layers()[0].has_activation());
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cases = vec![
            Calibrator::identity(),
            Calibrator::temperature(2.5).unwrap(),
            Calibrator::vector(vec![0.4, 0.4], vec![0.0, 0.1]).unwrap(),
            Calibrator::matrix(vec![vec![1.0, 0.1], vec![0.0, 0.9]], vec![0.0, 0.0], 1e-2)
                .unwrap(),
        ];
        for (i, c) in cases.iter().enumerate() {
            let path = dir.path().join(format!("c{i}.json"));
            save_calibrator(c, &path).unwrap();
            let back = load_calibrator(&path).unwrap();
            assert_eq!(&back, c);
        }
        // Network checkpoints round-trip through f32, so compare transforms.
        let net = GLayerNetwork::transparent_init(2, &[6], 0).unwrap();
        let g = Calibrator::glayers(net);
        let path = dir.path().join("g.json");
        save_calibrator(&g, &path).unwrap();
        let back = load_calibrator(&path).unwrap();
        let logits = [0.5f64, -0.25];
        assert_eq!(
            back.transform_batch(&logits, 1, 2).unwrap(),
            g.transform_batch(&logits, 1, 2).unwrap()
        );
    }

    #[test]
    fn unknown_checkpoint_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"kind":"temperature","temperature":2.0,"extra":1}"#).unwrap();
        assert!(matches!(load_calibrator(&path).unwrap_err(), Error::Format(_)));
    }
}
