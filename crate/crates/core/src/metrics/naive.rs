//! Slow, deliberately independent re-implementations of every metric,
//! kept free of any code shared with the production paths so the two can
//! be checked against each other. Quadratic in the batch size and capped
//! at 1,000 samples; test support only.

use crate::error::{Error, Result};
use crate::metrics::Prediction;

/// Which metric to recompute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricId {
    Top1Ks,
    TopRKs(usize),
    WithinTopRKs(usize),
    Ece(usize),
    ClasswiseEce(usize),
    BrierX100,
    Accuracy,
    Nll,
}

/// Recompute one metric the slow way. Values agree with the production
/// implementations to 1e-10 on batches of up to 1,000 samples.
pub fn naive_metric_oracle(pred: &Prediction, which: MetricId) -> Result<f64> {
    if pred.len() > 1000 {
        return Err(Error::validation(
            "the naive metric oracle is capped at 1,000 samples",
        ));
    }
    match which {
        MetricId::Top1Ks => Ok(ks_statistic(&per_sample(pred, 1, false)?)),
        MetricId::TopRKs(r) => Ok(ks_statistic(&per_sample(pred, r, false)?)),
        MetricId::WithinTopRKs(r) => Ok(ks_statistic(&per_sample(pred, r, true)?)),
        MetricId::Ece(bins) => ece_slow(pred, bins),
        MetricId::ClasswiseEce(bins) => classwise_ece_slow(pred, bins),
        MetricId::BrierX100 => Ok(brier_slow(pred)),
        MetricId::Accuracy => Ok(accuracy_slow(pred)),
        MetricId::Nll => Ok(nll_slow(pred)),
    }
}

// (score, correct, original index) for one ranked event per sample.
fn per_sample(pred: &Prediction, r: usize, within: bool) -> Result<Vec<(f64, bool, usize)>> {
    if r == 0 || r > pred.n_classes() {
        return Err(Error::validation(format!(
            "rank {r} out of range for {} classes",
            pred.n_classes()
        )));
    }
    let mut out = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let row = pred.row(i);
        let ranked = rank_classes(row);
        if within {
            let mut score = 0.0;
            let mut hit = false;
            for &class in ranked.iter().take(r) {
                score += row[class];
                if pred.labels()[i] as usize == class {
                    hit = true;
                }
            }
            out.push((score, hit, i));
        } else {
            let class = ranked[r - 1];
            out.push((row[class], pred.labels()[i] as usize == class, i));
        }
    }
    Ok(out)
}

// Selection sort of class indices by descending score, ascending index on
// ties.
fn rank_classes(row: &[f64]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..row.len()).collect();
    let mut ranked = Vec::with_capacity(row.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if row[remaining[i]] > row[remaining[best]] {
                best = i;
            }
        }
        ranked.push(remaining.remove(best));
    }
    ranked
}

// O(B^2): order samples by (score, original index) via selection sort,
// then recompute each prefix sum from scratch.
fn ks_statistic(samples: &[(f64, bool, usize)]) -> f64 {
    let b = samples.len() as f64;
    let mut remaining: Vec<&(f64, bool, usize)> = samples.iter().collect();
    let mut ordered = Vec::with_capacity(samples.len());
    while !remaining.is_empty() {
        let mut min = 0;
        for i in 1..remaining.len() {
            let (si, _, oi) = *remaining[i];
            let (sm, _, om) = *remaining[min];
            if si < sm || (si == sm && oi < om) {
                min = i;
            }
        }
        ordered.push(remaining.remove(min));
    }
    let mut ks = 0.0f64;
    for k in 1..=ordered.len() {
        let mut score_sum = 0.0;
        let mut correct_sum = 0.0;
        for item in ordered.iter().take(k) {
            score_sum += item.0;
            if item.1 {
                correct_sum += 1.0;
            }
        }
        let gap = (score_sum / b - correct_sum / b).abs();
        if gap > ks {
            ks = gap;
        }
    }
    ks
}

fn top_class(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

fn ece_slow(pred: &Prediction, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::validation("bin count must be positive"));
    }
    let b = pred.len() as f64;
    let width = 1.0 / bins as f64;
    let mut total = 0.0;
    for bin in 0..bins {
        let lo = bin as f64 * width;
        let hi = (bin + 1) as f64 * width;
        let mut conf = 0.0;
        let mut hits = 0.0;
        let mut count = 0.0;
        for i in 0..pred.len() {
            let row = pred.row(i);
            let class = top_class(row);
            let score = row[class];
            let inside = if bin == bins - 1 {
                score >= lo && score <= 1.0
            } else {
                score >= lo && score < hi
            };
            if inside {
                conf += score;
                hits += f64::from(pred.labels()[i] as usize == class);
                count += 1.0;
            }
        }
        if count > 0.0 {
            total += count / b * (conf / count - hits / count).abs();
        }
    }
    Ok(total)
}

fn classwise_ece_slow(pred: &Prediction, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::validation("bin count must be positive"));
    }
    let b = pred.len() as f64;
    let width = 1.0 / bins as f64;
    let mut total = 0.0;
    for class in 0..pred.n_classes() {
        for bin in 0..bins {
            let lo = bin as f64 * width;
            let hi = (bin + 1) as f64 * width;
            let mut conf = 0.0;
            let mut hits = 0.0;
            let mut count = 0.0;
            for i in 0..pred.len() {
                let score = pred.row(i)[class];
                let inside = if bin == bins - 1 {
                    score >= lo && score <= 1.0
                } else {
                    score >= lo && score < hi
                };
                if inside {
                    conf += score;
                    hits += f64::from(pred.labels()[i] as usize == class);
                    count += 1.0;
                }
            }
            if count > 0.0 {
                total += count / b * (conf / count - hits / count).abs();
            }
        }
    }
    Ok(total / pred.n_classes() as f64)
}

fn brier_slow(pred: &Prediction) -> f64 {
    let mut per_sample_sum = 0.0;
    for i in 0..pred.len() {
        let mut s = 0.0;
        for class in 0..pred.n_classes() {
            let target = if pred.labels()[i] as usize == class { 1.0 } else { 0.0 };
            let d = pred.row(i)[class] - target;
            s += d * d;
        }
        per_sample_sum += s / pred.n_classes() as f64;
    }
    100.0 * per_sample_sum / pred.len() as f64
}

fn accuracy_slow(pred: &Prediction) -> f64 {
    let mut hits = 0.0;
    for i in 0..pred.len() {
        if top_class(pred.row(i)) == pred.labels()[i] as usize {
            hits += 1.0;
        }
    }
    hits / pred.len() as f64
}

fn nll_slow(pred: &Prediction) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        total += -(pred.row(i)[pred.labels()[i] as usize]).ln();
    }
    total / pred.len() as f64
}
