//! `glayers calibrate`: fit a calibrator on a GLZ1 calibration set and
//! write its checkpoint, plus `cv_table.csv` / `trainlog.csv` /
//! `trainlog.json` next to the checkpoint for the g-layer method.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use glayers_core::calibrators::{
    fit_glayers, fit_glayers_direct, fit_matrix, fit_temperature, fit_vector, save_calibrator,
    TemperatureSearch,
};
use glayers_core::dataset::{load_logits, make_folds, DataFormat, LogitDataset};
use glayers_core::training::{BatchSize, HyperGrid, HyperParams, TrainConfig, TrainLog};

use crate::config::{check_input, check_output, load, parse_float_list, pick, required};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct CalibrateArgs {
    /// temperature, vector, matrix, or glayers.
    #[arg(long)]
    method: Option<String>,
    /// Calibration-set GLZ1 file.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Calibrator JSON checkpoint to write (glayers also writes
    /// `<out>.glnw`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total dense layers for glayers; 1 is a single affine layer.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden units per class; hidden width is h*C + 2.
    #[arg(long)]
    hidden_per_class: Option<usize>,
    /// Cross-validation folds for glayers.
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated learning-rate grid for glayers cross validation.
    #[arg(long)]
    grid_lr: Option<String>,
    /// Comma-separated weight-decay grid for glayers cross validation.
    #[arg(long)]
    grid_wd: Option<String>,
    /// Explicit learning rate. For glayers this skips cross validation
    /// (reusing rates found elsewhere); requires --wd.
    #[arg(long)]
    lr: Option<f64>,
    /// Explicit weight decay; see --lr.
    #[arg(long)]
    wd: Option<f64>,
    /// Off-diagonal L2 strength for matrix scaling.
    #[arg(long)]
    lambda_offdiag: Option<f64>,
    /// Comma-separated lambda grid: cross-validates the off-diagonal
    /// penalty of matrix scaling over these values.
    #[arg(long)]
    grid_lambda: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// "auto", "full", or a mini-batch size.
    #[arg(long)]
    batch: Option<String>,
    /// Symmetry-breaking noise scale on the spare hidden units at
    /// initialization (0 keeps the exact identity).
    #[arg(long)]
    init_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for cross validation; 1 is bit-reproducible.
    #[arg(long)]
    jobs: Option<usize>,
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateFile {
    method: Option<String>,
    calib: Option<PathBuf>,
    out: Option<PathBuf>,
    layers: Option<usize>,
    hidden_per_class: Option<usize>,
    folds: Option<usize>,
    grid_lr: Option<String>,
    grid_wd: Option<String>,
    lr: Option<f64>,
    wd: Option<f64>,
    lambda_offdiag: Option<f64>,
    grid_lambda: Option<String>,
    epochs: Option<usize>,
    patience: Option<usize>,
    batch: Option<String>,
    init_noise: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

pub fn run(args: CalibrateArgs) -> CliResult {
    let file: CalibrateFile = load(args.config.as_ref())?;
    let method = required(args.method, file.method, "method")?;
    let calib_path = required(args.calib, file.calib, "calib")?;
    let out = required(args.out, file.out, "out")?;
    check_input(&calib_path)?;
    check_output(&out)?;

    let calib = load_logits(&calib_path, DataFormat::Binary)?;
    let seed = pick(args.seed, file.seed, 0);
    let max_epochs = pick(args.epochs, file.epochs, 1000);
    let patience = pick(args.patience, file.patience, 25).min(max_epochs.max(1));
    let batch = parse_batch(pick(args.batch, file.batch, "auto".into()))?;
    let cfg = TrainConfig {
        learning_rate: pick(args.lr, file.lr, 1e-2),
        weight_decay: pick(args.wd, file.wd, 0.0),
        batch_size: batch,
        max_epochs,
        patience,
        seed,
        ..TrainConfig::default()
    };

    match method.as_str() {
        "temperature" => {
            let c = fit_temperature(&calib, &TemperatureSearch::default())?;
            save_calibrator(&c, &out)?;
            println!("wrote {} ({})", out.display(), describe(&c));
        }
        "vector" => {
            let c = fit_vector(&calib, &cfg)?;
            save_calibrator(&c, &out)?;
            println!("wrote {} ({})", out.display(), describe(&c));
        }
        "matrix" => {
            let lambda = match pick(args.grid_lambda, file.grid_lambda, String::new()) {
                s if s.is_empty() => pick(args.lambda_offdiag, file.lambda_offdiag, 1e-2),
                list => {
                    let lambdas = parse_float_list(&list, "grid-lambda")?;
                    let k = pick(args.folds, file.folds, 5);
                    cross_validate_lambda(&calib, &lambdas, k, &cfg)?
                }
            };
            let c = fit_matrix(&calib, lambda, &cfg)?;
            save_calibrator(&c, &out)?;
            println!("wrote {} ({})", out.display(), describe(&c));
        }
        "glayers" => {
            let layers = pick(args.layers, file.layers, 2);
            if layers == 0 {
                return Err(CliError::Usage("--layers must be at least 1".into()));
            }
            let h_per_class = pick(args.hidden_per_class, file.hidden_per_class, 3);
            let m = calib.logit_dim();
            let hidden = vec![h_per_class * m + 2; layers - 1];
            let noise = pick(args.init_noise, file.init_noise, 0.0);
            if noise != 0.0 {
                // Surface the constraint before any training starts.
                glayers_core::GLayerNetwork::transparent_init_noisy(m, &hidden, seed, noise)?;
            }
            let dir = out.parent().map(PathBuf::from).unwrap_or_default();
            let explicit = (pick(args.lr, file.lr, f64::NAN), pick(args.wd, file.wd, f64::NAN));
            let log: TrainLog;
            let hp: HyperParams;
            let calibrator;
            if explicit.0.is_finite() && explicit.1.is_finite() {
                hp = HyperParams { learning_rate: explicit.0, weight_decay: explicit.1 };
                let (c, l) = fit_glayers_direct(&calib, &hidden, &hp, &cfg)?;
                calibrator = c;
                log = l;
            } else {
                let grid = HyperGrid {
                    learning_rates: match pick(args.grid_lr, file.grid_lr, String::new()) {
                        s if s.is_empty() => HyperGrid::default().learning_rates,
                        s => parse_float_list(&s, "grid-lr")?,
                    },
                    weight_decays: match pick(args.grid_wd, file.grid_wd, String::new()) {
                        s if s.is_empty() => HyperGrid::default().weight_decays,
                        s => parse_float_list(&s, "grid-wd")?,
                    },
                };
                let k = pick(args.folds, file.folds, 5);
                let jobs = pick(args.jobs, file.jobs, 1);
                let result = fit_glayers(&calib, &hidden, &grid, k, &cfg, jobs)?;
                std::fs::write(dir.join("cv_table.csv"), result.cv_table.to_csv())
                    .map_err(|e| CliError::Internal(format!("cannot write cv_table.csv: {e}")))?;
                hp = result.hyperparams;
                log = result.train_log;
                calibrator = result.calibrator;
            }
            save_calibrator(&calibrator, &out)?;
            std::fs::write(dir.join("trainlog.csv"), log.to_csv())
                .map_err(|e| CliError::Internal(format!("cannot write trainlog.csv: {e}")))?;
            std::fs::write(
                dir.join("trainlog.json"),
                serde_json::to_string_pretty(&log.summary_json(Some(&hp)))
                    .map_err(|e| CliError::Internal(e.to_string()))?,
            )
            .map_err(|e| CliError::Internal(format!("cannot write trainlog.json: {e}")))?;
            println!(
                "wrote {} (glayers, lr={}, wd={}, best epoch {})",
                out.display(),
                hp.learning_rate,
                hp.weight_decay,
                log.best_epoch
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method {other:?}; expected temperature, vector, matrix, or glayers"
            )))
        }
    }
    Ok(())
}

fn describe(c: &glayers_core::Calibrator) -> String {
    use glayers_core::calibrators::CalibratorKind;
    match c.kind() {
        CalibratorKind::Temperature { temperature } => format!("temperature T={temperature:.6}"),
        k => format!("{}", kind_name(k)),
    }
}

fn kind_name(k: &glayers_core::calibrators::CalibratorKind) -> &'static str {
    use glayers_core::calibrators::CalibratorKind;
    match k {
        CalibratorKind::Identity => "identity",
        CalibratorKind::Temperature { .. } => "temperature",
        CalibratorKind::Vector { .. } => "vector",
        CalibratorKind::Matrix { .. } => "matrix",
        CalibratorKind::GLayers { .. } => "glayers",
    }
}

fn parse_batch(text: String) -> Result<BatchSize, CliError> {
    match text.as_str() {
        "auto" => Ok(BatchSize::Auto),
        "full" => Ok(BatchSize::Full),
        n => n
            .parse::<usize>()
            .map(BatchSize::Fixed)
            .map_err(|_| CliError::Usage(format!("--batch must be auto, full, or a size, got {n:?}"))),
    }
}

// K-fold search over the off-diagonal penalty of matrix scaling: fit on
// the training folds, score NLL on the held-out fold, pick the lambda
// with the lowest mean (ties to the smaller lambda).
fn cross_validate_lambda(
    calib: &LogitDataset,
    lambdas: &[f64],
    k: usize,
    cfg: &TrainConfig,
) -> Result<f64, CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Usage("--grid-lambda must be non-empty".into()));
    }
    let plan = make_folds(calib.len(), k, cfg.seed)?;
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &lambda in lambdas {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CliError::Usage(format!("lambda must be non-negative, got {lambda}")));
        }
        let mut mean = 0.0;
        for fold in 0..k {
            let (train_idx, val_idx) = plan.split_fold(fold);
            let train = calib.subset(&train_idx)?;
            let val = calib.subset(&val_idx)?;
            match fit_matrix(&train, lambda, cfg) {
                Ok(c) => mean += c.nll_on(&val)? / k as f64,
                Err(glayers_core::Error::TrainingDiverged { .. }) => {
                    mean = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if mean < best.0 || (mean == best.0 && lambda < best.1) {
            best = (mean, lambda);
        }
    }
    if !best.0.is_finite() {
        return Err(CliError::Internal("every lambda diverged during cross validation".into()));
    }
    Ok(best.1)
}
