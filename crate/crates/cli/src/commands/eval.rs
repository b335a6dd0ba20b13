//! `glayers eval`: compute the metrics report for a test set, optionally
//! through a fitted calibrator, and export the plot-data CSVs.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use glayers_core::calibrators::load_calibrator;
use glayers_core::dataset::{load_logits, DataFormat};
use glayers_core::metrics::{
    cumulative_csv, cumulative_curves, reliability_csv, reliability_data, MetricsReport,
};
use glayers_core::Calibrator;

use crate::config::{check_input, check_output, load, pick, required};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Test-set GLZ1 file.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Calibrator JSON checkpoint; mutually exclusive with --uncalibrated.
    #[arg(long)]
    calibrator: Option<PathBuf>,
    /// Evaluate the raw softmax outputs.
    #[arg(long)]
    uncalibrated: bool,
    /// Report JSON path; `<stem>.csv`, `reliability.csv` and
    /// `cumulative.csv` are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram bins for ECE and the reliability table.
    #[arg(long)]
    bins: Option<usize>,
    /// Deepest rank for the top-r metrics (clamped to the class count).
    #[arg(long)]
    top_r: Option<usize>,
    /// Report the Brier score without the 1/n normalization.
    #[arg(long)]
    brier_raw: bool,
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    test: Option<PathBuf>,
    calibrator: Option<PathBuf>,
    uncalibrated: Option<bool>,
    out: Option<PathBuf>,
    bins: Option<usize>,
    top_r: Option<usize>,
    brier_raw: Option<bool>,
}

pub fn run(args: EvalArgs) -> CliResult {
    let file: EvalFile = load(args.config.as_ref())?;
    let test_path = required(args.test, file.test, "test")?;
    let out = required(args.out, file.out, "out")?;
    let uncalibrated = args.uncalibrated || file.uncalibrated.unwrap_or(false);
    let calibrator_path = args.calibrator.or(file.calibrator);
    let bins = pick(args.bins, file.bins, 15);
    let top_r = pick(args.top_r, file.top_r, 5);
    let brier_raw = args.brier_raw || file.brier_raw.unwrap_or(false);

    check_input(&test_path)?;
    check_output(&out)?;
    let calibrator = match (&calibrator_path, uncalibrated) {
        (Some(_), true) => {
            return Err(CliError::Usage(
                "--calibrator and --uncalibrated are mutually exclusive".into(),
            ))
        }
        (Some(path), false) => {
            check_input(path)?;
            load_calibrator(path)?
        }
        (None, true) => Calibrator::identity(),
        (None, false) => {
            return Err(CliError::Usage(
                "pass --calibrator FILE or --uncalibrated".into(),
            ))
        }
    };

    let test = load_logits(&test_path, DataFormat::Binary)?;
    let pred = calibrator.transform_dataset(&test)?;
    let report = MetricsReport::compute(&pred, bins, top_r, brier_raw)?;

    let dir = out.parent().map(PathBuf::from).unwrap_or_default();
    std::fs::write(&out, report.to_json())
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", out.display())))?;
    std::fs::write(out.with_extension("csv"), report.to_csv())
        .map_err(|e| CliError::Internal(format!("cannot write report CSV: {e}")))?;
    std::fs::write(
        dir.join("reliability.csv"),
        reliability_csv(&reliability_data(&pred, bins)?),
    )
    .map_err(|e| CliError::Internal(format!("cannot write reliability.csv: {e}")))?;
    std::fs::write(dir.join("cumulative.csv"), cumulative_csv(&cumulative_curves(&pred)))
        .map_err(|e| CliError::Internal(format!("cannot write cumulative.csv: {e}")))?;

    println!(
        "accuracy {:.4}  nll {:.4}  top-1 KS {:.4}  ece {:.4}  report {}",
        report.accuracy,
        report.nll,
        report.ks_top[0],
        report.ece,
        out.display()
    );
    Ok(())
}
