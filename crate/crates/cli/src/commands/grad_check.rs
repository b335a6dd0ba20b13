//! `glayers grad-check`: compare the analytic backward pass against
//! central finite differences on random small networks. Exits 0 when the
//! worst relative error stays at or below 1e-4, 1 otherwise.

use clap::Args;

use glayers_core::GLayerNetwork;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random network/batch instances to test.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Negative control for the test harness: flips the analytic gradient
    /// sign so the check must fail.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

pub fn run(args: GradCheckArgs) -> CliResult {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let (max_err, trials) = run_trials(args.seed, args.trials, args.inject_sign_flip)?;
    println!("grad-check: {trials} trials, max relative error {max_err:.3e} (tolerance 1e-4)");
    if max_err <= 1e-4 {
        println!("grad-check: PASS");
        Ok(())
    } else {
        Err(CliError::Internal(format!(
            "analytic gradients disagree with finite differences: {max_err:.3e} > 1e-4"
        )))
    }
}

fn run_trials(seed: u64, trials: usize, sign_flip: bool) -> Result<(f64, usize), CliError> {
    // Small deterministic xorshift over the trial index keeps this free of
    // extra dependencies.
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let m = 2 + (next() % 4) as usize; // 2..=5
        let depth = (next() % 3) as usize; // 0..=2 hidden layers
        let hidden: Vec<usize> = (0..depth).map(|_| 2 * m + (next() % 4) as usize).collect();
        let net = GLayerNetwork::glorot_init(m, &hidden, next())?;
        let b_sz = 1 + (next() % 8) as usize;
        let batch: Vec<f64> = (0..b_sz * m)
            .map(|_| (next() % 4000) as f64 / 1000.0 - 2.0)
            .collect();
        let labels: Vec<u32> = (0..b_sz).map(|_| (next() % m as u64) as u32).collect();

        let trace = net.forward(&batch, b_sz)?;
        let analytic = net.backward(&trace, &labels)?;
        let numeric = net.finite_diff_gradients(&batch, b_sz, &labels, 1e-5)?;
        let err = if sign_flip {
            negated_error(&analytic, &numeric)
        } else {
            analytic.max_relative_error(&numeric, 1e-6)
        };
        if err > max_err {
            max_err = err;
        }
        let _ = trial;
    }
    Ok((max_err, trials))
}

// Relative error of the sign-flipped analytic gradient against the
// numeric one.
fn negated_error(
    analytic: &glayers_core::Gradients,
    numeric: &glayers_core::Gradients,
) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in analytic.layers().iter().zip(numeric.layers()) {
        for (x, y) in a
            .weights
            .iter()
            .chain(a.bias.iter())
            .zip(b.weights.iter().chain(b.bias.iter()))
        {
            let flipped = -x;
            let denom = flipped.abs().max(y.abs()).max(1e-6);
            worst = worst.max((flipped - y).abs() / denom);
        }
    }
    worst
}
