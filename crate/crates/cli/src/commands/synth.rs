//! `glayers synth`: sample a synthetic logit dataset and write it as GLZ1
//! plus a JSON sidecar holding the generating spec (so posteriors stay
//! evaluable later).

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use glayers_core::dataset::{save_logits, DataFormat};
use glayers_core::synthetic::{miscalibrate, synth_sample, Miscalibration, SyntheticSpec};

use crate::config::{check_output, load, pick, required};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct SynthArgs {
    /// Number of classes (the logit dimension equals it).
    #[arg(long)]
    classes: Option<usize>,
    /// Logit dimension; must equal --classes.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Gaussian standard deviation of the class-conditional logits.
    #[arg(long)]
    sigma: Option<f64>,
    /// Class-mean separation; defaults to sigma^2, which makes the data
    /// exactly calibrated for the identity calibrator.
    #[arg(long)]
    separation: Option<f64>,
    /// Optional temperature distortion applied to the generated logits
    /// (1.0 leaves them calibrated).
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output GLZ1 path; a `<out>.spec.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    classes: Option<usize>,
    dim: Option<usize>,
    n: Option<usize>,
    sigma: Option<f64>,
    separation: Option<f64>,
    temperature: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    spec: &'a SyntheticSpec,
    miscalibration: Option<&'a Miscalibration>,
}

pub fn run(args: SynthArgs) -> CliResult {
    let file: SynthFile = load(args.config.as_ref())?;
    let classes = pick(args.classes, file.classes, 5);
    let dim = pick(args.dim, file.dim, classes);
    let n = pick(args.n, file.n, 10_000);
    let sigma = pick(args.sigma, file.sigma, 1.0);
    let temperature = pick(args.temperature, file.temperature, 1.0);
    let seed = pick(args.seed, file.seed, 0);
    let out = required(args.out, file.out, "out")?;

    if dim != classes {
        return Err(CliError::Usage(format!(
            "--dim ({dim}) must equal --classes ({classes})"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    check_output(&out)?;

    let separation = pick(args.separation, file.separation, sigma * sigma);
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(CliError::Usage(format!(
            "--separation must be positive, got {separation}"
        )));
    }

    let mut spec = SyntheticSpec::identity_calibrated(classes, separation, seed);
    spec.sigma2 = sigma * sigma;
    let (mut dataset, _) = synth_sample(&spec, n)?;

    let distortion = if temperature != 1.0 {
        let d = Miscalibration::Temperature { temperature };
        dataset = miscalibrate(&dataset, &d)?;
        Some(d)
    } else {
        None
    };

    save_logits(&dataset, &out, DataFormat::Binary)?;
    let sidecar = Sidecar { spec: &spec, miscalibration: distortion.as_ref() };
    let sidecar_path = sidecar_path(&out);
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar)
            .map_err(|e| CliError::Internal(format!("cannot serialize spec: {e}")))?,
    )
    .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", sidecar_path.display())))?;

    println!(
        "wrote {n} samples ({classes} classes) to {} and spec to {}",
        out.display(),
        sidecar_path.display()
    );
    Ok(())
}

fn sidecar_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".spec.json");
    out.with_file_name(name)
}
