//! Multi-class calibration and accuracy metrics.
//!
//! The KS error is the maximum absolute difference between the cumulative
//! predicted-score mass and the cumulative correctness mass over
//! score-sorted samples (ties broken by original index). Top-r variants
//! score the r-th ranked class; within-top-r variants score the mass of
//! the top r classes. ECE and the reliability table share one binning
//! rule: `bins` equal-width intervals over [0, 1], left-closed, with 1.0
//! falling in the last bin.

pub mod naive;

use serde::Serialize;

use crate::error::{Error, Result};

/// A batch of simplex rows with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    probs: Vec<f64>,
    n_classes: usize,
    labels: Vec<u32>,
}

impl Prediction {
    pub fn new(probs: Vec<f64>, n_classes: usize, labels: Vec<u32>) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::validation("predictions need at least two classes"));
        }
        if labels.is_empty() || probs.len() != labels.len() * n_classes {
            return Err(Error::validation(format!(
                "prediction shape mismatch: {} probabilities, {} labels, {} classes",
                probs.len(),
                labels.len(),
                n_classes
            )));
        }
        for (i, row) in probs.chunks_exact(n_classes).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::validation(format!(
                        "probability row {i} has a negative or non-finite entry"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "probability row {i} sums to {sum}, expected 1 within 1e-6"
                )));
            }
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= n_classes) {
            return Err(Error::validation(format!(
                "label {l} at sample {i} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { probs, n_classes, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Classes of sample `i` ordered by descending score, ties by
    /// ascending class index.
    fn ranking(&self, i: usize) -> Vec<usize> {
        let row = self.row(i);
        let mut order: Vec<usize> = (0..self.n_classes).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order
    }
}

/// Predicted class: argmax with ties resolved to the lowest class index.
pub fn argmax_class(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

// Shared prefix-max statistic: sort by (score, original index) ascending,
// then take the max over prefixes of |cum_score/B - cum_correct/B|.
fn prefix_ks(scores: &[f64], correct: &[bool]) -> f64 {
    let b = scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    let mut cum_score = 0.0f64;
    let mut cum_correct = 0.0f64;
    let mut ks = 0.0f64;
    for &i in &order {
        cum_score += scores[i];
        cum_correct += if correct[i] { 1.0 } else { 0.0 };
        ks = ks.max((cum_score / b - cum_correct / b).abs());
    }
    ks
}

/// Top-1 KS calibration error.
pub fn top1_ks(pred: &Prediction) -> f64 {
    topr_ks(pred, 1).expect("r = 1 is always valid")
}

/// KS calibration error of the r-th ranked prediction (1-based).
pub fn topr_ks(pred: &Prediction, r: usize) -> Result<f64> {
    check_rank(pred, r)?;
    let mut scores = Vec::with_capacity(pred.len());
    let mut correct = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let ranking = pred.ranking(i);
        let class = ranking[r - 1];
        scores.push(pred.row(i)[class]);
        correct.push(pred.labels[i] as usize == class);
    }
    Ok(prefix_ks(&scores, &correct))
}

/// KS calibration error of the within-top-r event: score is the summed
/// mass of the top r classes, the event is the label being among them.
pub fn within_topr_ks(pred: &Prediction, r: usize) -> Result<f64> {
    check_rank(pred, r)?;
    let mut scores = Vec::with_capacity(pred.len());
    let mut correct = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let ranking = pred.ranking(i);
        let row = pred.row(i);
        let mut mass = 0.0;
        let mut hit = false;
        for &class in &ranking[..r] {
            mass += row[class];
            hit |= pred.labels[i] as usize == class;
        }
        scores.push(mass);
        correct.push(hit);
    }
    Ok(prefix_ks(&scores, &correct))
}

/// Arithmetic mean of `topr_ks` for r = 1..=r_max.
pub fn avg_top_ks(pred: &Prediction, r_max: usize) -> Result<f64> {
    check_rank(pred, r_max)?;
    let mut sum = 0.0;
    for r in 1..=r_max {
        sum += topr_ks(pred, r)?;
    }
    Ok(sum / r_max as f64)
}

fn check_rank(pred: &Prediction, r: usize) -> Result<()> {
    if r == 0 || r > pred.n_classes {
        return Err(Error::validation(format!(
            "rank {r} out of range for {} classes",
            pred.n_classes
        )));
    }
    Ok(())
}

fn bin_index(score: f64, bins: usize) -> usize {
    ((score * bins as f64) as usize).min(bins - 1)
}

/// Expected calibration error over `bins` equal-width top-1 score bins.
pub fn ece(pred: &Prediction, bins: usize) -> Result<f64> {
    let table = reliability_data(pred, bins)?;
    let b = pred.len() as f64;
    Ok(table
        .iter()
        .map(|bin| bin.count as f64 / b * (bin.avg_conf - bin.accuracy).abs())
        .sum())
}

/// Mean over classes of the binned calibration error of the class score
/// against the class indicator.
pub fn classwise_ece(pred: &Prediction, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::validation("bin count must be positive"));
    }
    let n = pred.n_classes;
    let b = pred.len() as f64;
    let mut total = 0.0;
    for class in 0..n {
        let mut conf_sum = vec![0.0f64; bins];
        let mut hit_sum = vec![0.0f64; bins];
        let mut counts = vec![0usize; bins];
        for i in 0..pred.len() {
            let score = pred.row(i)[class];
            let k = bin_index(score, bins);
            conf_sum[k] += score;
            hit_sum[k] += f64::from(pred.labels[i] as usize == class);
            counts[k] += 1;
        }
        let mut class_ece = 0.0;
        for k in 0..bins {
            if counts[k] > 0 {
                let c = counts[k] as f64;
                class_ece += c / b * ((conf_sum[k] / c) - (hit_sum[k] / c)).abs();
            }
        }
        total += class_ece;
    }
    Ok(total / n as f64)
}

/// Brier score times 100, with the squared-error sum divided by the class
/// count (the normalization that keeps many-class scores comparable).
pub fn brier_x100(pred: &Prediction) -> f64 {
    brier(pred) * 100.0 / pred.n_classes as f64
}

/// Brier score times 100 without the `1/n` normalization.
pub fn brier_x100_raw(pred: &Prediction) -> f64 {
    brier(pred) * 100.0
}

fn brier(pred: &Prediction) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let row = pred.row(i);
        let label = pred.labels[i] as usize;
        for (class, &p) in row.iter().enumerate() {
            let target = f64::from(class == label);
            total += (p - target) * (p - target);
        }
    }
    total / pred.len() as f64
}

/// Fraction of samples whose argmax equals the label.
pub fn accuracy(pred: &Prediction) -> f64 {
    let hits = (0..pred.len())
        .filter(|&i| argmax_class(pred.row(i)) == pred.labels[i] as usize)
        .count();
    hits as f64 / pred.len() as f64
}

/// Mean negative log-probability at the label (may be `+inf`).
pub fn nll_metric(pred: &Prediction) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        total -= pred.row(i)[pred.labels[i] as usize].ln();
    }
    total / pred.len() as f64
}

/// One row of the reliability table behind ECE. Empty bins carry zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    pub avg_conf: f64,
    pub accuracy: f64,
}

/// Per-bin confidence/accuracy table over top-1 scores, including empty
/// bins.
pub fn reliability_data(pred: &Prediction, bins: usize) -> Result<Vec<ReliabilityBin>> {
    if bins == 0 {
        return Err(Error::validation("bin count must be positive"));
    }
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for i in 0..pred.len() {
        let row = pred.row(i);
        let class = argmax_class(row);
        let score = row[class];
        let k = bin_index(score, bins);
        conf_sum[k] += score;
        hit_sum[k] += f64::from(pred.labels[i] as usize == class);
        counts[k] += 1;
    }
    Ok((0..bins)
        .map(|k| {
            let c = counts[k];
            ReliabilityBin {
                bin_low: k as f64 / bins as f64,
                bin_high: (k + 1) as f64 / bins as f64,
                count: c,
                avg_conf: if c > 0 { conf_sum[k] / c as f64 } else { 0.0 },
                accuracy: if c > 0 { hit_sum[k] / c as f64 } else { 0.0 },
            }
        })
        .collect())
}

/// One point of the cumulative score/correctness curves, in top-1-score
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CumulativePoint {
    pub fractile: f64,
    pub cumulative_score: f64,
    pub cumulative_correct: f64,
}

/// The cumulative curves whose maximum row-wise gap is exactly `top1_ks`.
pub fn cumulative_curves(pred: &Prediction) -> Vec<CumulativePoint> {
    let b = pred.len() as f64;
    let mut scores = Vec::with_capacity(pred.len());
    let mut correct = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let row = pred.row(i);
        let class = argmax_class(row);
        scores.push(row[class]);
        correct.push(pred.labels[i] as usize == class);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    let mut cum_score = 0.0f64;
    let mut cum_correct = 0.0f64;
    let mut out = Vec::with_capacity(pred.len());
    for (pos, &i) in order.iter().enumerate() {
        cum_score += scores[i];
        cum_correct += if correct[i] { 1.0 } else { 0.0 };
        out.push(CumulativePoint {
            fractile: (pos + 1) as f64 / b,
            cumulative_score: cum_score / b,
            cumulative_correct: cum_correct / b,
        });
    }
    out
}

/// The full metric set of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub nll: f64,
    pub brier_x100: f64,
    pub ece: f64,
    pub classwise_ece: f64,
    pub ks_top: Vec<f64>,
    pub within_top_ks: Vec<f64>,
    pub avg_top_ks: f64,
    pub bins: usize,
    pub top_r: usize,
}

impl MetricsReport {
    /// Compute every metric; `top_r` is clamped to the class count.
    pub fn compute(pred: &Prediction, bins: usize, top_r: usize, raw_brier: bool) -> Result<Self> {
        let r_max = top_r.max(1).min(pred.n_classes());
        let mut ks_top = Vec::with_capacity(r_max);
        let mut within = Vec::with_capacity(r_max);
        for r in 1..=r_max {
            ks_top.push(topr_ks(pred, r)?);
            within.push(within_topr_ks(pred, r)?);
        }
        let avg = ks_top.iter().sum::<f64>() / r_max as f64;
        Ok(Self {
            accuracy: accuracy(pred),
            nll: nll_metric(pred),
            brier_x100: if raw_brier { brier_x100_raw(pred) } else { brier_x100(pred) },
            ece: ece(pred, bins)?,
            classwise_ece: classwise_ece(pred, bins)?,
            ks_top,
            within_top_ks: within,
            avg_top_ks: avg,
            bins,
            top_r: r_max,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Single-record flat CSV with per-rank columns.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("accuracy,nll,brier_x100,ece,classwise_ece");
        let mut row = format!(
            "{},{},{},{},{}",
            self.accuracy, self.nll, self.brier_x100, self.ece, self.classwise_ece
        );
        for (r, v) in self.ks_top.iter().enumerate() {
            header.push_str(&format!(",ks_top_{}", r + 1));
            row.push_str(&format!(",{v}"));
        }
        for (r, v) in self.within_top_ks.iter().enumerate() {
            header.push_str(&format!(",within_top_ks_{}", r + 1));
            row.push_str(&format!(",{v}"));
        }
        header.push_str(",avg_top_ks");
        row.push_str(&format!(",{}", self.avg_top_ks));
        format!("{header}\n{row}\n")
    }
}

/// `bin_low,bin_high,count,avg_conf,accuracy` rows.
pub fn reliability_csv(table: &[ReliabilityBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count,avg_conf,accuracy\n");
    for b in table {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.bin_low, b.bin_high, b.count, b.avg_conf, b.accuracy
        ));
    }
    out
}

/// `fractile,cumulative_score,cumulative_correct` rows.
pub fn cumulative_csv(points: &[CumulativePoint]) -> String {
    let mut out = String::from("fractile,cumulative_score,cumulative_correct\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.fractile, p.cumulative_score, p.cumulative_correct
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pred(probs: Vec<f64>, n: usize, labels: Vec<u32>) -> Prediction {
        Prediction::new(probs, n, labels).unwrap()
    }

    #[test]
    fn confident_predictor_ks_is_error_rate() {
        // All scores ~1.0, one of ten wrong: KS = 0.1.
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            probs.extend_from_slice(&[1.0, 0.0]);
            labels.push(u32::from(i == 3)); // sample 3 is labeled class 1: wrong
        }
        let p = pred(probs, 2, labels);
        assert_abs_diff_eq!(top1_ks(&p), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn ks_tie_handling_hand_case() {
        // B=2, scores [0.5, 0.5], correctness [1, 0]:
        // prefix diffs are 0.25 then 0; KS = 0.25 under either tie order.
        let p = pred(vec![0.5, 0.5, 0.5, 0.5], 2, vec![0, 1]);
        // argmax ties resolve to class 0; sample 0 correct, sample 1 not.
        assert_abs_diff_eq!(top1_ks(&p), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn matched_prefix_sums_give_zero_ks() {
        // Scores equal correctness in every prefix (confident and right).
        let p = pred(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 2, vec![0, 0, 0]);
        assert_eq!(top1_ks(&p), 0.0);
        // Balanced half-confidence case, prefix diffs hand-enumerated:
        // cum_score k*0.5, cum_correct ceil(k/2); peak |0.5-1|/4 = 0.125.
        let q = pred(vec![0.5; 8], 2, vec![0, 1, 0, 1]);
        assert_abs_diff_eq!(top1_ks(&q), 0.125, epsilon = 1e-12);
    }

    #[test]
    fn topr_equals_top1_at_rank_one() {
        let probs = vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.2, 0.7];
        let p = pred(probs, 3, vec![0, 2, 1]);
        assert_eq!(topr_ks(&p, 1).unwrap().to_bits(), top1_ks(&p).to_bits());
        assert_eq!(
            within_topr_ks(&p, 1).unwrap().to_bits(),
            top1_ks(&p).to_bits()
        );
    }

    #[test]
    fn topr_single_sample_hand_case() {
        // B=1, n=2, probs [0.7, 0.3], label = class ranked 2nd:
        // top-2 score 0.3, correct -> |0.3 - 1| = 0.7.
        let p = pred(vec![0.7, 0.3], 2, vec![1]);
        assert_abs_diff_eq!(topr_ks(&p, 2).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn within_top_n_is_zero() {
        // Dyadic rows sum to exactly 1.0, so the statistic is exactly 0.
        let probs = vec![0.5, 0.25, 0.25, 0.125, 0.5, 0.375];
        let p = pred(probs, 3, vec![2, 0]);
        assert_eq!(within_topr_ks(&p, 3).unwrap(), 0.0);
        // General rows only sum to 1 within rounding.
        let q = pred(vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3], 3, vec![2, 0]);
        assert!(within_topr_ks(&q, 3).unwrap() < 1e-12);
    }

    #[test]
    fn rank_out_of_range_rejected() {
        let p = pred(vec![0.5, 0.5], 2, vec![0]);
        assert!(topr_ks(&p, 0).is_err());
        assert!(topr_ks(&p, 3).is_err());
        assert!(within_topr_ks(&p, 3).is_err());
    }

    #[test]
    fn ece_single_bin_collapses_to_mean_gap() {
        // mean conf 0.8, accuracy 0.6 -> ECE = 0.2 with one bin.
        let probs = vec![
            0.9, 0.1, 0.7, 0.3, 0.8, 0.2, 0.9, 0.1, 0.7, 0.3,
        ];
        let labels = vec![0, 0, 0, 1, 1]; // hits: 1, 1, 1, 0, 0
        let p = pred(probs, 2, labels);
        assert_abs_diff_eq!(ece(&p, 1).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn ece_fifteen_bins_hand_case() {
        // confs [0.95, 0.65], correctness [1, 0], 15 bins: bins 14 and 9,
        // ECE = 0.5*|0.95-1| + 0.5*|0.65-0| = 0.35.
        let p = pred(vec![0.95, 0.05, 0.65, 0.35], 2, vec![0, 1]);
        assert_abs_diff_eq!(ece(&p, 15).unwrap(), 0.35, epsilon = 1e-12);
        assert_eq!(bin_index(0.95, 15), 14);
        assert_eq!(bin_index(0.65, 15), 9);
        assert_eq!(bin_index(1.0, 15), 14);
    }

    #[test]
    fn perfect_predictor_has_zero_ece() {
        let p = pred(vec![1.0, 0.0, 1.0, 0.0], 2, vec![0, 0]);
        assert_eq!(ece(&p, 15).unwrap(), 0.0);
    }

    #[test]
    fn classwise_ece_total_misallocation_is_one() {
        let p = pred(vec![1.0, 0.0, 1.0, 0.0], 2, vec![1, 1]);
        assert_abs_diff_eq!(classwise_ece(&p, 15).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn classwise_ece_binary_structure() {
        let p = pred(vec![0.7, 0.3, 0.4, 0.6], 2, vec![0, 1]);
        let both = classwise_ece(&p, 10).unwrap();
        assert!(both >= 0.0 && both <= 1.0);
    }

    #[test]
    fn brier_values() {
        let exact = pred(vec![1.0, 0.0], 2, vec![0]);
        assert_eq!(brier_x100(&exact), 0.0);
        let uniform = pred(vec![0.5, 0.5], 2, vec![0]);
        assert_abs_diff_eq!(brier_x100(&uniform), 25.0, epsilon = 1e-12);
        let skewed = pred(vec![0.8, 0.2], 2, vec![0]);
        assert_abs_diff_eq!(brier_x100(&skewed), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(brier_x100_raw(&skewed), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_and_tie_rule() {
        let p = pred(
            vec![0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.1, 0.9],
            2,
            vec![0, 0, 0, 0],
        );
        assert_abs_diff_eq!(accuracy(&p), 0.75, epsilon = 1e-15);
        // Exact tie counts as the lowest class index.
        let tie = pred(vec![0.5, 0.5], 2, vec![0]);
        assert_eq!(accuracy(&tie), 1.0);
    }

    #[test]
    fn nll_uniform_is_ln_n() {
        let p = pred(vec![0.25; 4], 4, vec![2]);
        assert_abs_diff_eq!(nll_metric(&p), 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn reliability_table_reproduces_ece() {
        let probs = vec![0.95, 0.05, 0.65, 0.35, 0.5, 0.5, 0.85, 0.15];
        let p = pred(probs, 2, vec![0, 1, 0, 0]);
        for bins in [1, 5, 15] {
            let table = reliability_data(&p, bins).unwrap();
            assert_eq!(table.len(), bins);
            let from_table: f64 = table
                .iter()
                .map(|b| b.count as f64 / p.len() as f64 * (b.avg_conf - b.accuracy).abs())
                .sum();
            assert_abs_diff_eq!(from_table, ece(&p, bins).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_curves_match_top1_ks_exactly() {
        let probs = vec![
            0.9, 0.1, 0.6, 0.4, 0.55, 0.45, 0.8, 0.2, 0.7, 0.3,
        ];
        let p = pred(probs, 2, vec![0, 1, 0, 0, 1]);
        let curves = cumulative_curves(&p);
        assert_eq!(curves.len(), 5);
        let max_gap = curves
            .iter()
            .map(|r| (r.cumulative_score - r.cumulative_correct).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_gap.to_bits(), top1_ks(&p).to_bits());
    }

    #[test]
    fn cumulative_single_sample() {
        let p = pred(vec![0.7, 0.3], 2, vec![0]);
        let curves = cumulative_curves(&p);
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].fractile, 1.0);
        assert_abs_diff_eq!(curves[0].cumulative_score, 0.7, epsilon = 1e-15);
        assert_eq!(curves[0].cumulative_correct, 1.0);
    }

    #[test]
    fn report_clamps_rank_and_serializes() {
        let p = pred(vec![0.6, 0.4, 0.3, 0.7], 2, vec![0, 1]);
        let report = MetricsReport::compute(&p, 15, 10, false).unwrap();
        assert_eq!(report.top_r, 2);
        assert_eq!(report.ks_top.len(), 2);
        let json = report.to_json();
        assert!(json.contains("\"accuracy\""));
        let csv = report.to_csv();
        assert!(csv.starts_with("accuracy,nll,brier_x100,ece,classwise_ece,ks_top_1"));
    }
}
