//! Dense calibration networks mapping logits to logits.
//!
//! A [`GLayerNetwork`] is a stack of dense layers with ReLU between them
//! and no activation on the last layer; the softmax lives outside the
//! network so that every calibrator family shares one activation
//! implementation. Gradients are hand-derived for this fixed layer type
//! (softmax + NLL fused at the output), with a central finite-difference
//! oracle for checking them.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const GLNW_MAGIC: &[u8; 4] = b"GLNW";

/// One dense layer: `out = weights * x + bias`, optionally followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Vec<f64>, // row-major, out_dim x in_dim
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    has_activation: bool,
}

impl DenseLayer {
    pub fn new(
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
        has_activation: bool,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::validation(format!(
                "layer shape mismatch: {} weights and {} biases for {}x{}",
                weights.len(),
                bias.len(),
                out_dim,
                in_dim
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("layer parameters must be finite"));
        }
        Ok(Self { weights, bias, in_dim, out_dim, has_activation })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_activation(&self) -> bool {
        self.has_activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// A logit-to-logit dense network: `R^m -> R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GLayerNetwork {
    layers: Vec<DenseLayer>,
    input_dim: usize,
}

impl GLayerNetwork {
    /// Assemble a network from layers, validating the dimension chain and
    /// that only the last layer is activation-free.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("network must have at least one layer"));
        }
        let input_dim = layers[0].in_dim;
        let mut prev = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim != prev {
                return Err(Error::validation(format!(
                    "layer {i} expects input dim {}, previous layer emits {prev}",
                    layer.in_dim
                )));
            }
            prev = layer.out_dim;
            let is_last = i == layers.len() - 1;
            if is_last && layer.has_activation {
                return Err(Error::validation("the final layer must not have an activation"));
            }
            if !is_last && !layer.has_activation {
                return Err(Error::validation(format!(
                    "hidden layer {i} must have an activation"
                )));
            }
        }
        if prev != input_dim {
            return Err(Error::validation(format!(
                "network must map back to its input dimension ({input_dim}), got {prev}"
            )));
        }
        Ok(Self { layers, input_dim })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Exact identity ("transparent") initialization.
    ///
    /// With no hidden layers this is a single affine layer with identity
    /// weights. With hidden layers, each hidden layer of width `h >= 2m`
    /// carries the signal as `[relu(z); relu(-z); 0...]` and the next layer
    /// reconstructs `z = relu(z) - relu(-z)`, so the whole network computes
    /// the identity exactly, including in floating point. Hidden units
    /// beyond `2m` start with zero incoming and outgoing weights.
    ///
    /// `seed` only matters through [`GLayerNetwork::transparent_init_noisy`];
    /// the plain constructor is deterministic and noise-free.
    pub fn transparent_init(m: usize, hidden_dims: &[usize], seed: u64) -> Result<Self> {
        Self::transparent_init_noisy(m, hidden_dims, seed, 0.0)
    }

    /// Transparent initialization with optional symmetry-breaking noise of
    /// the given scale on the extra (beyond `2m`) hidden units' incoming
    /// weights. Zero scale reproduces the exact identity.
    pub fn transparent_init_noisy(
        m: usize,
        hidden_dims: &[usize],
        seed: u64,
        noise_scale: f64,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::validation(format!("input dimension must be at least 2, got {m}")));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::validation("noise scale must be finite and non-negative"));
        }
        for &h in hidden_dims {
            if h < 2 * m {
                return Err(Error::validation(format!(
                    "hidden width {h} is too small for transparent initialization with {m} \
                     classes: the hidden size H must satisfy H > 2C (need at least {})",
                    2 * m
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
        if hidden_dims.is_empty() {
            let mut w = vec![0.0; m * m];
            for i in 0..m {
                w[i * m + i] = 1.0;
            }
            layers.push(DenseLayer::new(w, vec![0.0; m], m, m, false)?);
            return Self::from_layers(layers);
        }

        // First hidden layer reads the raw input: rows [I; -I; 0].
        let h0 = hidden_dims[0];
        let mut w = vec![0.0; h0 * m];
        for i in 0..m {
            w[i * m + i] = 1.0;
            w[(m + i) * m + i] = -1.0;
        }
        if noise_scale > 0.0 {
            for row in 2 * m..h0 {
                for j in 0..m {
                    w[row * m + j] = noise_scale * (rng.gen::<f64>() * 2.0 - 1.0);
                }
            }
        }
        layers.push(DenseLayer::new(w, vec![0.0; h0], m, h0, true)?);

        // Each subsequent hidden layer reconstructs the signal from the
        // previous pair of blocks and re-splits it: rows [R; -R; 0] where
        // R = [I, -I, 0].
        for win in hidden_dims.windows(2) {
            let (h_prev, h) = (win[0], win[1]);
            let mut w = vec![0.0; h * h_prev];
            for i in 0..m {
                w[i * h_prev + i] = 1.0;
                w[i * h_prev + m + i] = -1.0;
                w[(m + i) * h_prev + i] = -1.0;
                w[(m + i) * h_prev + m + i] = 1.0;
            }
            if noise_scale > 0.0 {
                for row in 2 * m..h {
                    for j in 0..h_prev {
                        w[row * h_prev + j] = noise_scale * (rng.gen::<f64>() * 2.0 - 1.0);
                    }
                }
            }
            layers.push(DenseLayer::new(w, vec![0.0; h], h_prev, h, true)?);
        }

        // Output layer reconstructs: [I, -I, 0].
        let h_last = *hidden_dims.last().unwrap();
        let mut w = vec![0.0; m * h_last];
        for i in 0..m {
            w[i * h_last + i] = 1.0;
            w[i * h_last + m + i] = -1.0;
        }
        layers.push(DenseLayer::new(w, vec![0.0; m], h_last, m, false)?);
        Self::from_layers(layers)
    }

    /// Glorot-uniform initialization: weights drawn from
    /// `U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))`, biases zero.
    pub fn glorot_init(m: usize, hidden_dims: &[usize], seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::validation(format!("input dimension must be at least 2, got {m}")));
        }
        if hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::validation("hidden widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(m);
        dims.extend_from_slice(hidden_dims);
        dims.push(m);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, win) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (win[0], win[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen::<f64>() * 2.0 * limit - limit)
                .collect();
            let is_last = i == dims.len() - 2;
            layers.push(DenseLayer::new(w, vec![0.0; fan_out], fan_in, fan_out, !is_last)?);
        }
        Self::from_layers(layers)
    }

    /// Run a row-major `batch_size x m` batch through the network and the
    /// final softmax, retaining per-layer intermediates for [`backward`].
    pub fn forward(&self, batch: &[f64], batch_size: usize) -> Result<ForwardTrace> {
        let m = self.input_dim;
        if batch.len() != batch_size * m || batch_size == 0 {
            return Err(Error::validation(format!(
                "batch buffer has {} values, expected {} ({} samples x {} dims)",
                batch.len(),
                batch_size * m,
                batch_size,
                m
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = Vec::with_capacity(self.layers.len());
        let mut input = batch;
        for layer in &self.layers {
            let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
            let mut z = vec![0.0; batch_size * out_dim];
            for b in 0..batch_size {
                let x = &input[b * in_dim..(b + 1) * in_dim];
                let out = &mut z[b * out_dim..(b + 1) * out_dim];
                for i in 0..out_dim {
                    let row = &layer.weights[i * in_dim..(i + 1) * in_dim];
                    let mut acc = layer.bias[i];
                    for j in 0..in_dim {
                        acc += row[j] * x[j];
                    }
                    out[i] = acc;
                }
            }
            let a = if layer.has_activation {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(a);
            input = act.last().unwrap();
        }

        let logits = act.last().unwrap();
        let mut probs = vec![0.0; batch_size * m];
        for b in 0..batch_size {
            softmax_into(&logits[b * m..(b + 1) * m], &mut probs[b * m..(b + 1) * m]);
        }
        Ok(ForwardTrace {
            input: batch.to_vec(),
            batch_size,
            pre,
            act,
            probs,
            n_classes: m,
        })
    }

    /// Analytic gradient of the mean NLL with respect to every weight and
    /// bias, given a trace from [`GLayerNetwork::forward`] on this network.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[u32]) -> Result<Gradients> {
        let m = self.input_dim;
        let b_sz = trace.batch_size;
        self.check_trace(trace)?;
        if labels.len() != b_sz {
            return Err(Error::validation(format!(
                "{} labels for a batch of {b_sz}",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= m) {
            return Err(Error::validation(format!("label {l} out of range for {m} classes")));
        }

        // Fused softmax + NLL output gradient: (probs - one_hot) / B.
        let inv_b = 1.0 / b_sz as f64;
        let mut delta: Vec<f64> = trace.probs.iter().map(|&p| p * inv_b).collect();
        for (b, &label) in labels.iter().enumerate() {
            delta[b * m + label as usize] -= inv_b;
        }

        let mut grads: Vec<LayerGrads> = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
            let below: &[f64] = if li == 0 { &trace.input } else { &trace.act[li - 1] };

            {
                let g = &mut grads[li];
                for b in 0..b_sz {
                    let d = &delta[b * out_dim..(b + 1) * out_dim];
                    let a = &below[b * in_dim..(b + 1) * in_dim];
                    for i in 0..out_dim {
                        let di = d[i];
                        if di != 0.0 {
                            let row = &mut g.weights[i * in_dim..(i + 1) * in_dim];
                            for j in 0..in_dim {
                                row[j] += di * a[j];
                            }
                        }
                        g.bias[i] += di;
                    }
                }
            }

            if li > 0 {
                // delta_prev = (delta . W) masked by ReLU'(pre) of the layer below.
                let pre_below = &trace.pre[li - 1];
                let mut next = vec![0.0; b_sz * in_dim];
                for b in 0..b_sz {
                    let d = &delta[b * out_dim..(b + 1) * out_dim];
                    let nd = &mut next[b * in_dim..(b + 1) * in_dim];
                    for i in 0..out_dim {
                        let di = d[i];
                        if di != 0.0 {
                            let row = &layer.weights[i * in_dim..(i + 1) * in_dim];
                            for j in 0..in_dim {
                                nd[j] += di * row[j];
                            }
                        }
                    }
                    let p = &pre_below[b * in_dim..(b + 1) * in_dim];
                    for j in 0..in_dim {
                        if p[j] <= 0.0 {
                            nd[j] = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        Ok(Gradients { layers: grads })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.pre.len() != self.layers.len()
            || trace.n_classes != self.input_dim
            || trace.input.len() != trace.batch_size * self.input_dim
            || self
                .layers
                .iter()
                .zip(&trace.pre)
                .any(|(l, p)| p.len() != trace.batch_size * l.out_dim)
        {
            return Err(Error::validation(
                "forward trace does not match this network (stale or foreign trace)",
            ));
        }
        Ok(())
    }

    /// Central finite-difference gradient oracle:
    /// `(L(theta + eps) - L(theta - eps)) / (2 eps)` per parameter.
    ///
    /// Only intended for small networks; cost is two full forward passes per
    /// parameter.
    pub fn finite_diff_gradients(
        &self,
        batch: &[f64],
        batch_size: usize,
        labels: &[u32],
        eps: f64,
    ) -> Result<Gradients> {
        if !(1e-6..=1e-3).contains(&eps) {
            return Err(Error::validation(format!(
                "finite-difference step must lie in [1e-6, 1e-3], got {eps}"
            )));
        }
        let mut work = self.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for li in 0..self.layers.len() {
            let n_w = self.layers[li].weights.len();
            let n_b = self.layers[li].bias.len();
            let mut g = LayerGrads { weights: vec![0.0; n_w], bias: vec![0.0; n_b] };
            for wi in 0..n_w {
                g.weights[wi] =
                    central_diff(&mut work, batch, batch_size, labels, eps, |net, v| {
                        net.layers[li].weights[wi] = v;
                    }, self.layers[li].weights[wi])?;
            }
            for bi in 0..n_b {
                g.bias[bi] = central_diff(&mut work, batch, batch_size, labels, eps, |net, v| {
                    net.layers[li].bias[bi] = v;
                }, self.layers[li].bias[bi])?;
            }
            layers.push(g);
        }
        Ok(Gradients { layers })
    }

    /// Write the network to a GLNW checkpoint:
    /// `"GLNW"`, u32 layer count, then per layer u32 out_dim, u32 in_dim,
    /// u8 has_activation, f32 weights row-major, f32 biases; little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(GLNW_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
            out.push(u8::from(layer.has_activation));
            for &w in &layer.weights {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
            for &b in &layer.bias {
                out.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Load a GLNW checkpoint.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 8 || &bytes[0..4] != GLNW_MAGIC {
            return Err(Error::format("not a GLNW network checkpoint"));
        }
        let n_layers = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut off = 8;
        let mut layers = Vec::with_capacity(n_layers);
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::format("GLNW checkpoint is truncated"));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        for _ in 0..n_layers {
            let out_dim = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
            let in_dim = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
            let has_activation = take(&mut off, 1)?[0] != 0;
            let mut weights = Vec::with_capacity(out_dim * in_dim);
            for _ in 0..out_dim * in_dim {
                weights.push(f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64);
            }
            layers.push(DenseLayer::new(weights, bias, in_dim, out_dim, has_activation)?);
        }
        if off != bytes.len() {
            return Err(Error::format("GLNW checkpoint has trailing bytes"));
        }
        Self::from_layers(layers)
    }
}

fn central_diff(
    work: &mut GLayerNetwork,
    batch: &[f64],
    batch_size: usize,
    labels: &[u32],
    eps: f64,
    mut set: impl FnMut(&mut GLayerNetwork, f64),
    original: f64,
) -> Result<f64> {
    set(work, original + eps);
    let plus = batch_nll(work, batch, batch_size, labels)?;
    set(work, original - eps);
    let minus = batch_nll(work, batch, batch_size, labels)?;
    set(work, original);
    Ok((plus - minus) / (2.0 * eps))
}

/// Mean NLL of a batch under the network (forward pass only).
pub fn batch_nll(
    net: &GLayerNetwork,
    batch: &[f64],
    batch_size: usize,
    labels: &[u32],
) -> Result<f64> {
    let trace = net.forward(batch, batch_size)?;
    nll_loss(&trace.probs, net.input_dim(), labels)
}

/// Per-layer intermediates of one forward pass, plus the final
/// probabilities.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    batch_size: usize,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    probs: Vec<f64>,
    n_classes: usize,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Row-major `batch_size x m` probabilities.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The network output before softmax, row-major.
    pub fn pre_softmax(&self) -> &[f64] {
        self.act.last().unwrap()
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn layers(&self) -> &[LayerGrads] {
        &self.layers
    }

    #[cfg(test)]
    pub(crate) fn from_layer_parts(parts: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self {
            layers: parts
                .into_iter()
                .map(|(weights, bias)| LayerGrads { weights, bias })
                .collect(),
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest relative disagreement with another gradient set, using
    /// `|a - b| / max(|a|, |b|, floor)` per entry.
    pub fn max_relative_error(&self, other: &Gradients, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a
                .weights
                .iter()
                .chain(a.bias.iter())
                .zip(b.weights.iter().chain(b.bias.iter()))
            {
                let denom = x.abs().max(y.abs()).max(floor);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }
}

/// Numerically stable softmax with max subtraction. Rejects non-finite
/// inputs; use this at API boundaries.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::validation("softmax needs at least two entries"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("softmax input must be finite"));
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Mean `-log(probs[i][labels[i]])` over the batch.
///
/// Returns `+inf` when some probability at a label is exactly zero; the
/// caller decides how to treat non-finite losses.
pub fn nll_loss(probs: &[f64], n_classes: usize, labels: &[u32]) -> Result<f64> {
    if labels.is_empty() || probs.len() != labels.len() * n_classes {
        return Err(Error::validation(format!(
            "nll_loss: {} probabilities for {} labels with {} classes",
            probs.len(),
            labels.len(),
            n_classes
        )));
    }
    let mut total = 0.0f64;
    for (b, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= n_classes {
            return Err(Error::validation(format!(
                "label {label} out of range for {n_classes} classes"
            )));
        }
        total -= probs[b * n_classes + label].ln();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_analytic() {
        let p = softmax(&[2.0f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_no_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn nll_analytic_values() {
        assert_abs_diff_eq!(
            nll_loss(&[0.5, 0.5], 2, &[0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(nll_loss(&[1.0, 0.0], 2, &[0]).unwrap(), 0.0);
        // Hand-checked: both samples place 0.75 on the true class.
        assert_abs_diff_eq!(
            nll_loss(&[0.25, 0.75, 0.75, 0.25], 2, &[1, 0]).unwrap(),
            -(0.75f64.ln()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn nll_zero_prob_is_positive_infinity() {
        let v = nll_loss(&[0.0, 1.0], 2, &[0]).unwrap();
        assert!(v.is_infinite() && v > 0.0);
    }

    #[test]
    fn transparent_zero_hidden_is_exact_identity() {
        let net = GLayerNetwork::transparent_init(3, &[], 0).unwrap();
        assert_eq!(net.layers().len(), 1);
        let z = [1.7, -2.2, 0.0];
        let trace = net.forward(&z, 1).unwrap();
        assert_eq!(trace.pre_softmax(), &z);
    }

    #[test]
    fn transparent_hidden_identity_within_tolerance() {
        let net = GLayerNetwork::transparent_init(3, &[11], 0).unwrap();
        let z = [1.7, -2.2, 0.0];
        let trace = net.forward(&z, 1).unwrap();
        for (a, b) in trace.pre_softmax().iter().zip(&z) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn transparent_rejects_narrow_hidden() {
        let err = GLayerNetwork::transparent_init(3, &[5], 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("H > 2C"), "{msg}");
    }

    #[test]
    fn transparent_extra_units_start_dead() {
        let net = GLayerNetwork::transparent_init(2, &[6], 9).unwrap();
        let first = &net.layers()[0];
        for row in 4..6 {
            for j in 0..2 {
                assert_eq!(first.weight(row, j), 0.0);
            }
        }
        let last = &net.layers()[1];
        for i in 0..2 {
            for j in 4..6 {
                assert_eq!(last.weight(i, j), 0.0);
            }
        }
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = GLayerNetwork::glorot_init(4, &[8], 5).unwrap();
        let b = GLayerNetwork::glorot_init(4, &[8], 5).unwrap();
        assert_eq!(a, b);
        let c = GLayerNetwork::glorot_init(4, &[8], 6).unwrap();
        assert_ne!(a, c);
        let limit = (6.0 / 12.0f64).sqrt();
        for &w in a.layers()[0].weights() {
            assert!(w.abs() <= limit);
        }
    }

    #[test]
    fn forward_matches_softmax_for_transparent_net() {
        let net = GLayerNetwork::transparent_init(4, &[14], 3).unwrap();
        let z = [0.3, -1.0, 2.0, 0.0, 1.5, 1.5, -0.5, 0.25];
        let trace = net.forward(&z, 2).unwrap();
        for b in 0..2 {
            let expect = softmax(&z[b * 4..(b + 1) * 4]).unwrap();
            for (p, e) in trace.probs()[b * 4..(b + 1) * 4].iter().zip(&expect) {
                assert!((p - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_rows_are_simplex() {
        let net = GLayerNetwork::glorot_init(3, &[7], 11).unwrap();
        let z: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let trace = net.forward(&z, 10).unwrap();
        for b in 0..10 {
            let row = &trace.probs()[b * 3..(b + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn forward_double_identity_weights() {
        // Single affine layer with weights 2I on z = [1, 0]:
        // probs = softmax([2, 0]).
        let layer = DenseLayer::new(vec![2.0, 0.0, 0.0, 2.0], vec![0.0, 0.0], 2, 2, false).unwrap();
        let net = GLayerNetwork::from_layers(vec![layer]).unwrap();
        let trace = net.forward(&[1.0, 0.0], 1).unwrap();
        assert_abs_diff_eq!(trace.probs()[0], 0.8807970779778823, epsilon = 1e-6);
        assert_abs_diff_eq!(trace.probs()[1], 0.11920292202211755, epsilon = 1e-6);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = GLayerNetwork::transparent_init(3, &[], 0).unwrap();
        assert!(net.forward(&[0.0; 4], 1).is_err());
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let a = GLayerNetwork::transparent_init(3, &[], 0).unwrap();
        let b = GLayerNetwork::transparent_init(3, &[11], 0).unwrap();
        let trace = a.forward(&[0.1, 0.2, 0.3], 1).unwrap();
        assert!(b.backward(&trace, &[0]).is_err());
    }

    #[test]
    fn backward_symmetric_case_has_zero_bias_gradient() {
        // Zero-weight output layer gives uniform probabilities; with
        // balanced labels the bias gradient cancels by symmetry.
        let layer = DenseLayer::new(vec![0.0; 4], vec![0.0; 2], 2, 2, false).unwrap();
        let net = GLayerNetwork::from_layers(vec![layer]).unwrap();
        let batch = [0.4, -0.4, 1.0, 2.0];
        let trace = net.forward(&batch, 2).unwrap();
        let grads = net.backward(&trace, &[0, 1]).unwrap();
        for &g in &grads.layers()[0].bias {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..25 {
            let m = rng.gen_range(2..=5usize);
            let depth = rng.gen_range(0..=2usize);
            let hidden: Vec<usize> = (0..depth).map(|_| 2 * m + rng.gen_range(0..=3)).collect();
            let net = GLayerNetwork::glorot_init(m, &hidden, 1000 + trial).unwrap();
            let b_sz = rng.gen_range(1..=8usize);
            let batch: Vec<f64> = (0..b_sz * m).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let labels: Vec<u32> = (0..b_sz).map(|_| rng.gen_range(0..m) as u32).collect();
            let trace = net.forward(&batch, b_sz).unwrap();
            let analytic = net.backward(&trace, &labels).unwrap();
            let numeric = net.finite_diff_gradients(&batch, b_sz, &labels, 1e-5).unwrap();
            let err = analytic.max_relative_error(&numeric, 1e-6);
            assert!(err <= 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn finite_diff_rejects_eps_out_of_range() {
        let net = GLayerNetwork::transparent_init(2, &[], 0).unwrap();
        let err = net.finite_diff_gradients(&[0.0, 0.0], 1, &[0], 1e-1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn central_difference_formula_is_exact_on_quadratics() {
        // Taylor: the central difference has error f'''(x)/6 * eps^2, which
        // vanishes for quadratics regardless of eps.
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 5.0;
        let fp = |x: f64| 6.0 * x - 2.0;
        for eps in [1e-3, 1e-4, 1e-6] {
            let cd = (f(1.3 + eps) - f(1.3 - eps)) / (2.0 * eps);
            assert!((cd - fp(1.3)).abs() < 1e-7, "eps {eps}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.glnw");
        let net = GLayerNetwork::glorot_init(3, &[8, 8], 7).unwrap();
        net.save(&path).unwrap();
        let back = GLayerNetwork::load(&path).unwrap();
        assert_eq!(back.layers().len(), net.layers().len());
        for (a, b) in back.layers().iter().zip(net.layers()) {
            assert_eq!(a.in_dim(), b.in_dim());
            assert_eq!(a.out_dim(), b.out_dim());
            assert_eq!(a.has_activation(), b.has_activation());
            // Stored as f32: equality after one round of truncation.
            for (x, y) in a.weights().iter().zip(b.weights()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.glnw");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(GLayerNetwork::load(&path).unwrap_err(), Error::Format(_)));
    }
}
