//! NLL minimization for calibration networks: SGD/Adam with decoupled
//! weight decay, early stopping on a monitored NLL with best-weights
//! restore, and k-fold cross-validated hyperparameter search.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{make_folds, LogitDataset};
use crate::error::{Error, Result};
use crate::network::{nll_loss, GLayerNetwork, Gradients};

/// Mini-batch size policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Full batch when the training set has at most 50,000 samples,
    /// otherwise mini-batches of 1024.
    Auto,
    Full,
    Fixed(usize),
}

impl BatchSize {
    pub fn resolve(&self, n_samples: usize) -> usize {
        match *self {
            BatchSize::Auto => {
                if n_samples <= 50_000 {
                    n_samples
                } else {
                    1024
                }
            }
            BatchSize::Full => n_samples,
            BatchSize::Fixed(b) => b.min(n_samples),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay: parameters shrink by `1 - lr * wd` each
    /// step (clamped at zero so that absurdly large decays collapse the
    /// parameters instead of exploding them). Applies to biases as well;
    /// set to zero to disable.
    pub weight_decay: f64,
    pub batch_size: BatchSize,
    pub max_epochs: usize,
    /// Epochs without monitored-NLL improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: BatchSize::Auto,
            max_epochs: 1000,
            patience: 25,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("weight decay must be non-negative and finite"));
        }
        if let BatchSize::Fixed(0) = self.batch_size {
            return Err(Error::validation("batch size must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::validation("patience must be positive"));
        }
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return Err(Error::validation(format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn with_rates(&self, hp: &HyperParams) -> Self {
        Self { learning_rate: hp.learning_rate, weight_decay: hp.weight_decay, ..self.clone() }
    }
}

/// One (learning rate, weight decay) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

/// The searched grid: the cross product of learning rates and weight
/// decays.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            weight_decays: vec![0.0, 1e-4, 1e-3, 1e-2],
        }
    }
}

impl HyperGrid {
    pub fn singleton(learning_rate: f64, weight_decay: f64) -> Self {
        Self { learning_rates: vec![learning_rate], weight_decays: vec![weight_decay] }
    }

    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.learning_rates.len() * self.weight_decays.len());
        for &lr in &self.learning_rates {
            for &wd in &self.weight_decays {
                out.push(HyperParams { learning_rate: lr, weight_decay: wd });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() {
            return Err(Error::validation("hyperparameter grid must be non-empty"));
        }
        if self.learning_rates.iter().any(|lr| !(lr > &0.0 && lr.is_finite()))
            || self.weight_decays.iter().any(|wd| !(wd >= &0.0 && wd.is_finite()))
        {
            return Err(Error::validation(
                "grid learning rates must be positive and weight decays non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::EarlyStop => write!(f, "early_stop"),
            StopReason::MaxEpochs => write!(f, "max_epochs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub monitor_nll: f64,
}

/// Per-epoch history of one fit. Epoch 0 is the untouched initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainLog {
    pub fn best_monitor_nll(&self) -> f64 {
        self.records[self.best_epoch].monitor_nll
    }

    /// `epoch,train_nll,monitor_nll` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_nll,monitor_nll\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_nll, r.monitor_nll));
        }
        out
    }

    pub fn summary_json(&self, hyperparams: Option<&HyperParams>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason.to_string(),
        });
        if let Some(hp) = hyperparams {
            v["learning_rate"] = hp.learning_rate.into();
            v["weight_decay"] = hp.weight_decay.into();
        }
        v
    }
}

/// Optimizer state paired with a network's parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    layers: Vec<MomentPair>,
}

#[derive(Debug, Clone)]
struct MomentPair {
    w_m: Vec<f64>,
    w_v: Vec<f64>,
    b_m: Vec<f64>,
    b_v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(net: &GLayerNetwork, kind: OptimizerKind) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| MomentPair {
                w_m: vec![0.0; l.weights().len()],
                w_v: vec![0.0; l.weights().len()],
                b_m: vec![0.0; l.bias().len()],
                b_v: vec![0.0; l.bias().len()],
            })
            .collect();
        Self { kind, step: 0, layers }
    }
}

/// Apply one optimizer step in place.
///
/// SGD: `theta <- theta * (1 - lr*wd) - lr * g`.
/// Adam: bias-corrected moments, then
/// `theta <- theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
/// The decay factor is clamped at zero in both cases.
pub fn apply_update(
    net: &mut GLayerNetwork,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if net.layers().len() != grads.layers().len() || state.layers.len() != grads.layers().len() {
        return Err(Error::validation("gradient/state shapes do not match the network"));
    }
    let lr = cfg.learning_rate;
    let decay = (1.0 - lr * cfg.weight_decay).max(0.0);
    match state.kind {
        OptimizerKind::Sgd => {
            for (layer, g) in net.layers_mut().iter_mut().zip(grads.layers()) {
                for (w, &gw) in layer.weights_mut().iter_mut().zip(&g.weights) {
                    *w = *w * decay - lr * gw;
                }
                for (b, &gb) in layer.bias_mut().iter_mut().zip(&g.bias) {
                    *b = *b * decay - lr * gb;
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, epsilon } => {
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for ((layer, g), moments) in net
                .layers_mut()
                .iter_mut()
                .zip(grads.layers())
                .zip(&mut state.layers)
            {
                adam_step(
                    layer.weights_mut(),
                    &g.weights,
                    &mut moments.w_m,
                    &mut moments.w_v,
                    lr, decay, beta1, beta2, epsilon, bc1, bc2,
                );
                adam_step(
                    layer.bias_mut(),
                    &g.bias,
                    &mut moments.b_m,
                    &mut moments.b_v,
                    lr, decay, beta1, beta2, epsilon, bc1, bc2,
                );
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Train `net` on `train`, monitoring NLL on `monitor` for early stopping,
/// and return the parameters from the epoch with the lowest monitored NLL
/// together with the full log.
///
/// The initialization counts as epoch 0, so the result never has a higher
/// monitored NLL than the starting network. Deterministic for a given
/// config.
pub fn fit(
    net: &GLayerNetwork,
    train: &LogitDataset,
    monitor: &LogitDataset,
    cfg: &TrainConfig,
) -> Result<(GLayerNetwork, TrainLog)> {
    cfg.validate()?;
    if train.logit_dim() != net.input_dim() || monitor.logit_dim() != net.input_dim() {
        return Err(Error::validation(format!(
            "dataset dimension {} does not match network dimension {}",
            train.logit_dim(),
            net.input_dim()
        )));
    }
    if train.n_classes() != monitor.n_classes() {
        return Err(Error::validation("train and monitor sets must agree on n_classes"));
    }

    let n = train.len();
    let m = train.logit_dim();
    let train_x = train.logits_f64();
    let train_y = train.labels();
    let monitor_x = monitor.logits_f64();
    let monitor_y = monitor.labels();

    let eval_monitor = |net: &GLayerNetwork| -> Result<f64> {
        crate::network::batch_nll(net, &monitor_x, monitor.len(), monitor_y)
    };

    let mut work = net.clone();
    let mut state = OptimizerState::new(&work, cfg.optimizer);
    let batch = cfg.batch_size.resolve(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let init_train = crate::network::batch_nll(&work, &train_x, n, train_y)?;
    let init_monitor = eval_monitor(&work)?;
    let mut records = vec![EpochRecord { epoch: 0, train_nll: init_train, monitor_nll: init_monitor }];
    let mut best = work.clone();
    let mut best_epoch = 0usize;
    let mut best_monitor = init_monitor;
    let mut since_best = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut scratch = vec![0.0f64; batch * m];
    let mut scratch_labels = vec![0u32; batch];

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0f64;
        if batch >= n {
            let trace = work.forward(&train_x, n)?;
            loss_sum = nll_loss(trace.probs(), m, train_y)? * n as f64;
            let grads = work.backward(&trace, train_y)?;
            apply_update(&mut work, &grads, &mut state, cfg)?;
        } else {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(batch) {
                let b_sz = chunk.len();
                for (row, &i) in chunk.iter().enumerate() {
                    scratch[row * m..(row + 1) * m]
                        .iter_mut()
                        .zip(&train_x[i * m..(i + 1) * m])
                        .for_each(|(d, &s)| *d = s);
                    scratch_labels[row] = train_y[i];
                }
                let trace = work.forward(&scratch[..b_sz * m], b_sz)?;
                let loss = nll_loss(trace.probs(), m, &scratch_labels[..b_sz])?;
                loss_sum += loss * b_sz as f64;
                let grads = work.backward(&trace, &scratch_labels[..b_sz])?;
                apply_update(&mut work, &grads, &mut state, cfg)?;
            }
        }
        let train_nll = loss_sum / n as f64;
        if !train_nll.is_finite() {
            return Err(Error::TrainingDiverged { epoch, learning_rate: cfg.learning_rate });
        }
        let monitor_nll = eval_monitor(&work)?;
        if !monitor_nll.is_finite() {
            return Err(Error::TrainingDiverged { epoch, learning_rate: cfg.learning_rate });
        }
        records.push(EpochRecord { epoch, train_nll, monitor_nll });

        if monitor_nll < best_monitor {
            best_monitor = monitor_nll;
            best_epoch = epoch;
            best = work.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    Ok((best, TrainLog { records, best_epoch, stop_reason }))
}

/// One cell of the cross-validation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvCell {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub fold: usize,
    pub val_nll: f64,
}

/// The `k x |grid|` table of best-epoch validation NLLs.
#[derive(Debug, Clone, PartialEq)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
}

impl CvTable {
    /// `learning_rate,weight_decay,fold,val_nll` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("learning_rate,weight_decay,fold,val_nll\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.learning_rate, c.weight_decay, c.fold, c.val_nll
            ));
        }
        out
    }

    pub fn mean_for(&self, hp: &HyperParams) -> f64 {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.learning_rate == hp.learning_rate && c.weight_decay == hp.weight_decay)
            .map(|c| c.val_nll)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

// Deterministic per-cell seed so the table is identical regardless of
// evaluation order (splitmix64 over a combined word).
fn cell_seed(seed: u64, fold: usize, grid_index: usize) -> u64 {
    let mut z = seed
        .wrapping_add((fold as u64).wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add((grid_index as u64).wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Cross-validate the hyperparameter grid with k folds and return the best
/// point (ties broken by smaller weight decay, then smaller learning rate)
/// together with the full NLL table.
///
/// A fold that diverges scores its grid point as `+inf`, excluding it from
/// selection without failing the search. `jobs > 1` evaluates cells on
/// that many threads; per-cell seeding keeps the table identical to a
/// sequential run.
pub fn cross_validate(
    dataset: &LogitDataset,
    grid: &HyperGrid,
    k: usize,
    hidden_dims: &[usize],
    cfg_base: &TrainConfig,
    jobs: usize,
) -> Result<(HyperParams, CvTable)> {
    grid.validate()?;
    cfg_base.validate()?;
    let points = grid.points();
    let plan = make_folds(dataset.len(), k, cfg_base.seed)?;

    struct Cell {
        grid_index: usize,
        fold: usize,
    }
    let cells: Vec<Cell> = (0..points.len())
        .flat_map(|gi| (0..k).map(move |f| Cell { grid_index: gi, fold: f }))
        .collect();

    let run_cell = |cell: &Cell| -> Result<f64> {
        let hp = points[cell.grid_index];
        let (train_idx, val_idx) = plan.split_fold(cell.fold);
        let train = dataset.subset(&train_idx)?;
        let val = dataset.subset(&val_idx)?;
        let seed = cell_seed(cfg_base.seed, cell.fold, cell.grid_index);
        let net = GLayerNetwork::transparent_init(dataset.logit_dim(), hidden_dims, seed)?;
        let cfg = TrainConfig { seed, ..cfg_base.with_rates(&hp) };
        match fit(&net, &train, &val, &cfg) {
            Ok((_, log)) => Ok(log.best_monitor_nll()),
            Err(Error::TrainingDiverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };

    let mut results: Vec<f64> = vec![f64::NAN; cells.len()];
    if jobs <= 1 || cells.len() <= 1 {
        for (slot, cell) in results.iter_mut().zip(&cells) {
            *slot = run_cell(cell)?;
        }
    } else {
        let jobs = jobs.min(cells.len());
        let chunk = cells.len().div_ceil(jobs);
        let errors: std::sync::Mutex<Vec<Error>> = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for (slots, work) in results.chunks_mut(chunk).zip(cells.chunks(chunk)) {
                let errors = &errors;
                let run_cell = &run_cell;
                scope.spawn(move || {
                    for (slot, cell) in slots.iter_mut().zip(work) {
                        match run_cell(cell) {
                            Ok(v) => *slot = v,
                            Err(e) => {
                                errors.lock().unwrap().push(e);
                                return;
                            }
                        }
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
    }

    let table = CvTable {
        cells: cells
            .iter()
            .zip(&results)
            .map(|(c, &v)| CvCell {
                learning_rate: points[c.grid_index].learning_rate,
                weight_decay: points[c.grid_index].weight_decay,
                fold: c.fold,
                val_nll: v,
            })
            .collect(),
    };

    let mut means = vec![0.0f64; points.len()];
    for (c, &v) in cells.iter().zip(&results) {
        means[c.grid_index] += if v.is_finite() { v / k as f64 } else { f64::INFINITY };
    }
    let best = points
        .iter()
        .zip(&means)
        .min_by(|(a, ma), (b, mb)| {
            ma.total_cmp(mb)
                .then(a.weight_decay.total_cmp(&b.weight_decay))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
        })
        .map(|(p, m)| (*p, *m))
        .expect("grid is non-empty");
    if !best.1.is_finite() {
        return Err(Error::validation(
            "every hyperparameter grid point diverged during cross validation",
        ));
    }
    Ok((best.0, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_dataset(n: usize, seed: u64) -> LogitDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 3;
        let mut logits = Vec::with_capacity(n * m);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.gen_range(0..m);
            for j in 0..m {
                let mean = if j == y { 2.0 } else { 0.0 };
                logits.push((mean + rng.gen::<f64>() - 0.5) as f32);
            }
            labels.push(y as u32);
        }
        LogitDataset::new(logits, labels, m, m).unwrap()
    }

    #[test]
    fn zero_gradient_zero_decay_is_fixed_point() {
        let mut net = GLayerNetwork::transparent_init(3, &[], 0).unwrap();
        let before = net.clone();
        let trace = net.forward(&[0.0, 0.0, 0.0], 1).unwrap();
        let mut grads = net.backward(&trace, &[0]).unwrap();
        for l in 0..grads.layers().len() {
            // zero out
            let zero_w = vec![0.0; grads.layers()[l].weights.len()];
            let zero_b = vec![0.0; grads.layers()[l].bias.len()];
            grads = Gradients::from_layer_parts(
                grads
                    .layers()
                    .iter()
                    .enumerate()
                    .map(|(i, lg)| {
                        if i == l {
                            (zero_w.clone(), zero_b.clone())
                        } else {
                            (lg.weights.clone(), lg.bias.clone())
                        }
                    })
                    .collect(),
            );
        }
        let mut state = OptimizerState::new(&net, OptimizerKind::Sgd);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        apply_update(&mut net, &grads, &mut state, &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        // theta = 1, g = 2, lr = 0.1, wd = 0 -> theta' = 0.8.
        let layer = crate::network::DenseLayer::new(
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            2,
            2,
            false,
        )
        .unwrap();
        let mut net = GLayerNetwork::from_layers(vec![layer]).unwrap();
        let grads = Gradients::from_layer_parts(vec![(vec![2.0, 0.0, 0.0, 0.0], vec![0.0, 0.0])]);
        let mut state = OptimizerState::new(&net, OptimizerKind::Sgd);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        apply_update(&mut net, &grads, &mut state, &cfg).unwrap();
        assert_abs_diff_eq!(net.layers()[0].weight(0, 0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let layer = crate::network::DenseLayer::new(
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            2,
            2,
            false,
        )
        .unwrap();
        let mut net = GLayerNetwork::from_layers(vec![layer]).unwrap();
        let grads =
            Gradients::from_layer_parts(vec![(vec![0.37, 0.0, 0.0, -1.4], vec![0.0, 0.0])]);
        let mut state = OptimizerState::new(&net, OptimizerKind::adam());
        let lr = 0.05;
        let cfg = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
        apply_update(&mut net, &grads, &mut state, &cfg).unwrap();
        // Bias correction makes the first step ~ lr * sign(g).
        assert_abs_diff_eq!(net.layers()[0].weight(0, 0), 1.0 - lr, epsilon = 1e-6);
        assert_abs_diff_eq!(net.layers()[0].weight(1, 1), 1.0 + lr, epsilon = 1e-6);
    }

    #[test]
    fn fit_zero_epochs_returns_identity_unchanged() {
        let ds = toy_dataset(64, 1);
        let net = GLayerNetwork::transparent_init(3, &[11], 0).unwrap();
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let (out, log) = fit(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(out, net);
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.best_epoch, 0);
        let uncal = crate::network::batch_nll(&net, &ds.logits_f64(), ds.len(), ds.labels()).unwrap();
        assert_abs_diff_eq!(log.records[0].monitor_nll, uncal, epsilon = 1e-12);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = toy_dataset(80, 2);
        let net = GLayerNetwork::transparent_init(3, &[11], 7).unwrap();
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 30,
            batch_size: BatchSize::Fixed(16),
            seed: 5,
            ..TrainConfig::default()
        };
        let (a_net, a_log) = fit(&net, &ds, &ds, &cfg).unwrap();
        let (b_net, b_log) = fit(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(a_net, b_net);
        assert_eq!(a_log, b_log);
    }

    #[test]
    fn fit_best_weights_contract() {
        let ds = toy_dataset(100, 3);
        let net = GLayerNetwork::transparent_init(3, &[11], 1).unwrap();
        let cfg = TrainConfig { max_epochs: 50, patience: 50, ..TrainConfig::default() };
        let (out, log) = fit(&net, &ds, &ds, &cfg).unwrap();
        let min = log
            .records
            .iter()
            .map(|r| r.monitor_nll)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(log.best_monitor_nll(), min, epsilon = 1e-12);
        let actual =
            crate::network::batch_nll(&out, &ds.logits_f64(), ds.len(), ds.labels()).unwrap();
        assert_abs_diff_eq!(actual, min, epsilon = 1e-12);
        // Non-worsening: transparent start is epoch 0.
        assert!(min <= log.records[0].monitor_nll);
    }

    #[test]
    fn cross_validate_singleton_grid() {
        let ds = toy_dataset(60, 4);
        let grid = HyperGrid::singleton(1e-2, 0.0);
        let cfg = TrainConfig { max_epochs: 20, patience: 20, ..TrainConfig::default() };
        let (best, table) = cross_validate(&ds, &grid, 5, &[], &cfg, 1).unwrap();
        assert_eq!(best.learning_rate, 1e-2);
        assert_eq!(best.weight_decay, 0.0);
        assert_eq!(table.cells.len(), 5);
    }

    #[test]
    fn cross_validate_duplicate_points_pick_first() {
        let ds = toy_dataset(40, 5);
        let grid = HyperGrid { learning_rates: vec![1e-2, 1e-2], weight_decays: vec![1e-3] };
        let cfg = TrainConfig { max_epochs: 5, patience: 5, ..TrainConfig::default() };
        let (best, table) = cross_validate(&ds, &grid, 4, &[], &cfg, 1).unwrap();
        assert_eq!(best, HyperParams { learning_rate: 1e-2, weight_decay: 1e-3 });
        assert_eq!(table.cells.len(), 8);
    }

    #[test]
    fn cross_validate_parallel_matches_sequential() {
        let ds = toy_dataset(60, 6);
        let grid = HyperGrid { learning_rates: vec![1e-2, 1e-3], weight_decays: vec![0.0, 1e-3] };
        let cfg = TrainConfig { max_epochs: 10, patience: 10, ..TrainConfig::default() };
        let (best_a, table_a) = cross_validate(&ds, &grid, 3, &[], &cfg, 1).unwrap();
        let (best_b, table_b) = cross_validate(&ds, &grid, 3, &[], &cfg, 4).unwrap();
        assert_eq!(best_a, best_b);
        assert_eq!(table_a, table_b);
    }

    #[test]
    fn patience_must_not_exceed_max_epochs() {
        let cfg = TrainConfig { max_epochs: 10, patience: 11, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
