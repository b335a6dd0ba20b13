// Scratch harness for sizing the slow verification runs. Not part of the
// public surface; removed before release if undesired.

use std::time::Instant;

use glayers_core::calibrators::{fit_glayers, fit_temperature, CalibratorKind, TemperatureSearch};
use glayers_core::dataset::split;
use glayers_core::metrics::{top1_ks, Prediction};
use glayers_core::network::GLayerNetwork;
use glayers_core::synthetic::{miscalibrate, stationarity_check, synth_sample, Miscalibration, SyntheticSpec};
use glayers_core::training::{fit, HyperGrid, TrainConfig};
use glayers_core::Calibrator;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "temp" || which == "all" {
        let t0 = Instant::now();
        let spec = SyntheticSpec::identity_calibrated(5, 1.0, 7);
        let (ds, _) = synth_sample(&spec, 50_000).unwrap();
        let warm = miscalibrate(&ds, &Miscalibration::Temperature { temperature: 2.5 }).unwrap();
        let c = fit_temperature(&warm, &TemperatureSearch::default()).unwrap();
        if let CalibratorKind::Temperature { temperature } = c.kind() {
            println!("temp: fitted T = {temperature:.5} in {:?}", t0.elapsed());
        }
        let c1 = fit_temperature(&ds, &TemperatureSearch::default()).unwrap();
        if let CalibratorKind::Temperature { temperature } = c1.kind() {
            println!("temp: on calibrated data T = {temperature:.5}");
        }
    }

    if which == "stationarity-scan" {
        for seed in 0..24u64 {
            let spec = SyntheticSpec::identity_calibrated(3, 1.0, seed);
            let (ds, _) = synth_sample(&spec, 64).unwrap();
            let warm =
                miscalibrate(&ds, &Miscalibration::Temperature { temperature: 2.0 }).unwrap();
            let mut current = GLayerNetwork::transparent_init(3, &[], 0).unwrap();
            for (lr, epochs) in [(1e-2, 4000), (1e-3, 4000), (1e-4, 6000), (1e-5, 6000)] {
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience: epochs,
                    ..TrainConfig::default()
                };
                let (next, _) = fit(&current, &warm, &warm, &cfg).unwrap();
                current = next;
            }
            let fitted = Calibrator::glayers(current);
            let norm = stationarity_check(&fitted, &warm).unwrap();
            let pred = fitted.transform_dataset(&warm).unwrap();
            println!("seed {seed}: grad {:.2e} KS {:.4}", norm, top1_ks(&pred));
        }
    }

    if which == "stationarity" || which == "all" {
        let t0 = Instant::now();
        let spec = SyntheticSpec::identity_calibrated(3, 1.0, 13);
        let (ds, _) = synth_sample(&spec, 64).unwrap();
        let warm = miscalibrate(&ds, &Miscalibration::Temperature { temperature: 2.0 }).unwrap();
        let hidden: Vec<usize> = std::env::args()
            .nth(2)
            .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
            .unwrap_or_default();
        let net = GLayerNetwork::transparent_init(3, &hidden, 0).unwrap();
        let pre = Calibrator::glayers(net.clone());
        println!("stationarity: pre-training grad norm = {:.6}", stationarity_check(&pre, &warm).unwrap());
        let mut current = net;
        for (lr, epochs) in [(1e-2, 4000), (1e-3, 4000), (1e-4, 6000), (1e-5, 6000), (1e-6, 8000)] {
            let cfg = TrainConfig {
                learning_rate: lr,
                max_epochs: epochs,
                patience: epochs,
                ..TrainConfig::default()
            };
            let (next, _) = fit(&current, &warm, &warm, &cfg).unwrap();
            current = next;
        }
        let fitted = Calibrator::glayers(current);
        let norm = stationarity_check(&fitted, &warm).unwrap();
        let pred = fitted.transform_dataset(&warm).unwrap();
        println!(
            "stationarity: grad norm = {:.3e}, train KS = {:.4}, took {:?}",
            norm,
            top1_ks(&pred),
            t0.elapsed()
        );
    }

    if which == "glorot" || which == "all" {
        let t0 = Instant::now();
        let n = 100usize;
        let spec = SyntheticSpec::identity_calibrated(n, 9.0, 31);
        let (ds, _) = synth_sample(&spec, 5000).unwrap();
        let h = 3 * n + 2;
        let transparent = Calibrator::glayers(GLayerNetwork::transparent_init(n, &[h], 0).unwrap());
        let glorot = Calibrator::glayers(GLayerNetwork::glorot_init(n, &[h], 0).unwrap());
        let base = Calibrator::identity().transform_dataset(&ds).unwrap();
        let tp = transparent.transform_dataset(&ds).unwrap();
        let gp = glorot.transform_dataset(&ds).unwrap();
        let acc = |p: &Prediction| glayers_core::metrics::accuracy(p);
        println!(
            "glorot: base acc {:.4}, transparent acc {:.4}, glorot acc {:.4}, took {:?}",
            acc(&base),
            acc(&tp),
            acc(&gp),
            t0.elapsed()
        );
    }

    if which == "e2e" || which == "all" {
        let t0 = Instant::now();
        let spec = SyntheticSpec::identity_calibrated(5, 1.0, 42);
        let (full, posterior) = synth_sample(&spec, 50_000).unwrap();
        let warm = miscalibrate(&full, &Miscalibration::Temperature { temperature: 2.5 }).unwrap();
        let (calib, test) = split(&warm, 0.2, 7).unwrap();
        let uncal = Calibrator::identity().transform_dataset(&test).unwrap();
        println!("e2e: uncalibrated test KS = {:.4}", top1_ks(&uncal));

        let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
        let fitresult = fit_glayers(&calib, &[17], &HyperGrid::default(), 5, &cfg, 1).unwrap();
        println!(
            "e2e: best hp lr={} wd={}, final best epoch {}",
            fitresult.hyperparams.learning_rate,
            fitresult.hyperparams.weight_decay,
            fitresult.train_log.best_epoch
        );
        let cal = fitresult.calibrator.transform_dataset(&test).unwrap();
        println!("e2e: calibrated test KS = {:.4}", top1_ks(&cal));

        // Mean abs gap to the true posterior on the test set.
        let m = test.logit_dim();
        let truth = posterior.eval_dataset(&test);
        // careful: posterior of the *miscalibrated* logits is the posterior
        // of the original z; evaluate on recovered z = z'/T instead.
        let mut gap = 0.0;
        let zprime = test.logits_f64();
        for b in 0..test.len() {
            let row: Vec<f64> = zprime[b * m..(b + 1) * m].iter().map(|v| v / 2.5).collect();
            let p_true = posterior.eval(&row);
            for (a, t) in cal.row(b).iter().zip(&p_true) {
                gap += (a - t).abs();
            }
        }
        gap /= (test.len() * m) as f64;
        let _ = truth;
        println!("e2e: mean |q(g(z)) - P(y|z)| = {:.5}, took {:?}", gap, t0.elapsed());
    }
}
