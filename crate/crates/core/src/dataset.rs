//! Logit datasets: the in-memory sample container plus its two bit-exact
//! file formats.
//!
//! # GLZ1 binary layout
//! ```text
//! bytes  0-3:   "GLZ1"      (magic)
//! bytes  4-7:   N           (number of samples, little-endian u32)
//! bytes  8-11:  m           (logit dimension, little-endian u32)
//! bytes 12-15:  n_classes   (little-endian u32)
//! then:         N * m little-endian f32 logits, row-major
//! then:         N little-endian u32 labels, each in [0, n_classes)
//! ```
//!
//! # CSV layout
//! ```text
//! logit_0,logit_1,...,logit_{m-1},label
//! 1.5,-0.5,1
//! ```
//! Labels are 0-based. Logits are written with Rust's shortest
//! round-trip float formatting, which is exact to well within 9
//! significant digits for `f32`, so a CSV round trip reproduces every
//! value bit-for-bit.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const GLZ1_MAGIC: &[u8; 4] = b"GLZ1";

/// On-disk encoding of a [`LogitDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Binary,
    Csv,
}

/// N samples of m-dimensional pre-softmax logits with integer class labels.
///
/// Immutable after construction; the logit dimension must equal the class
/// count (the identity-initialization contract of the calibration networks
/// relies on it, and datasets with `m != n_classes` are rejected up front).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDataset {
    logits: Vec<f32>,
    labels: Vec<u32>,
    logit_dim: usize,
    n_classes: usize,
}

impl LogitDataset {
    /// Build a dataset from row-major logits and labels, validating every
    /// invariant: at least one sample, `m == n_classes >= 2`, finite logits,
    /// labels in range.
    pub fn new(
        logits: Vec<f32>,
        labels: Vec<u32>,
        logit_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::validation(format!(
                "n_classes must be at least 2, got {n_classes}"
            )));
        }
        if logit_dim < 2 {
            return Err(Error::validation(format!(
                "logit dimension must be at least 2, got {logit_dim}"
            )));
        }
        if logit_dim != n_classes {
            return Err(Error::validation(format!(
                "logit dimension ({logit_dim}) must equal n_classes ({n_classes}); \
                 datasets with m != n_classes are not supported"
            )));
        }
        if labels.is_empty() {
            return Err(Error::validation("dataset must contain at least one sample"));
        }
        if logits.len() != labels.len() * logit_dim {
            return Err(Error::validation(format!(
                "logit buffer has {} values, expected {} ({} samples x {} dims)",
                logits.len(),
                labels.len() * logit_dim,
                labels.len(),
                logit_dim
            )));
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "logit at sample {} dim {} is not finite",
                pos / logit_dim,
                pos % logit_dim
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= n_classes) {
            return Err(Error::validation(format!(
                "label {l} at sample {i} is out of range for n_classes={n_classes}"
            )));
        }
        Ok(Self { logits, labels, logit_dim, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn logit_dim(&self) -> usize {
        self.logit_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.logit_dim..(i + 1) * self.logit_dim]
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    /// Row-major copy of the logits widened to `f64` for numeric work.
    pub fn logits_f64(&self) -> Vec<f64> {
        self.logits.iter().map(|&v| v as f64).collect()
    }

    /// New dataset containing the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::validation("subset must contain at least one sample"));
        }
        let mut logits = Vec::with_capacity(indices.len() * self.logit_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::validation(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
            logits.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(logits, labels, self.logit_dim, self.n_classes)
    }
}

/// Load a dataset from `path` in the declared format.
pub fn load_logits(path: impl AsRef<Path>, format: DataFormat) -> Result<LogitDataset> {
    let path = path.as_ref();
    match format {
        DataFormat::Binary => {
            let bytes = fs::read(path)?;
            parse_binary(&bytes)
        }
        DataFormat::Csv => {
            let text = fs::read_to_string(path)?;
            parse_csv(&text)
        }
    }
}

/// Save a dataset to `path` in the declared format.
pub fn save_logits(dataset: &LogitDataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        DataFormat::Binary => fs::write(path, encode_binary(dataset))?,
        DataFormat::Csv => fs::write(path, encode_csv(dataset))?,
    }
    Ok(())
}

pub(crate) fn encode_binary(dataset: &LogitDataset) -> Vec<u8> {
    let n = dataset.len();
    let m = dataset.logit_dim;
    let mut out = Vec::with_capacity(16 + 4 * n * m + 4 * n);
    out.extend_from_slice(GLZ1_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.n_classes as u32).to_le_bytes());
    for v in &dataset.logits {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &dataset.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub(crate) fn parse_binary(bytes: &[u8]) -> Result<LogitDataset> {
    if bytes.len() < 16 {
        return Err(Error::format(format!(
            "GLZ1 file too short: expected at least a 16-byte header, got {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != GLZ1_MAGIC {
        return Err(Error::format(format!(
            "bad magic: expected \"GLZ1\", got {:?}",
            &bytes[0..4]
        )));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let n = read_u32(4) as usize;
    let m = read_u32(8) as usize;
    let n_classes = read_u32(12) as usize;
    let expected = 16usize
        .checked_add(
            n.checked_mul(m)
                .and_then(|nm| nm.checked_mul(4))
                .and_then(|b| b.checked_add(n * 4))
                .ok_or_else(|| Error::format("GLZ1 header dimensions overflow"))?,
        )
        .ok_or_else(|| Error::format("GLZ1 header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "GLZ1 payload size mismatch: header declares N={n}, m={m} \
             ({expected} bytes total), file has {} bytes",
            bytes.len()
        )));
    }
    let mut logits = Vec::with_capacity(n * m);
    let mut off = 16;
    for _ in 0..n * m {
        logits.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    LogitDataset::new(logits, labels, m, n_classes)
}

pub(crate) fn encode_csv(dataset: &LogitDataset) -> String {
    let m = dataset.logit_dim;
    let mut out = String::new();
    for j in 0..m {
        out.push_str(&format!("logit_{j},"));
    }
    out.push_str("label\n");
    for i in 0..dataset.len() {
        for v in dataset.row(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", dataset.labels[i]));
    }
    out
}

pub(crate) fn parse_csv(text: &str) -> Result<LogitDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("CSV file is empty"))?;
    let columns: Vec<&str> = header.trim_end().split(',').collect();
    if columns.len() < 3 || columns[columns.len() - 1] != "label" {
        return Err(Error::format(
            "CSV header must be logit_0,...,logit_{m-1},label with m >= 2",
        ));
    }
    let m = columns.len() - 1;
    for (j, col) in columns[..m].iter().enumerate() {
        let expected = format!("logit_{j}");
        if *col != expected {
            return Err(Error::format(format!(
                "CSV header column {j} is {col:?}, expected {expected:?}"
            )));
        }
    }

    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 1 {
            return Err(Error::format(format!(
                "CSV row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                m + 1
            )));
        }
        for field in &fields[..m] {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::format(format!(
                    "CSV row {}: cannot parse logit value {field:?}",
                    lineno + 2
                ))
            })?;
            logits.push(v);
        }
        let label: u32 = fields[m].trim().parse().map_err(|_| {
            Error::format(format!(
                "CSV row {}: cannot parse label {:?}",
                lineno + 2,
                fields[m]
            ))
        })?;
        labels.push(label);
    }
    LogitDataset::new(logits, labels, m, m)
}

/// Deterministic fold assignment for k-fold cross validation: a seeded
/// permutation of `[0, N)` cut into k contiguous blocks whose sizes differ
/// by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    assignments: Vec<u32>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_samples(&self) -> usize {
        self.assignments.len()
    }

    /// Validation fold of each sample.
    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    /// Indices whose validation fold is `fold`, ascending.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// `(train, validation)` index split for one fold, both ascending.
    pub fn split_fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::with_capacity(self.n_samples());
        let mut val = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f as usize == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }
}

/// Split a dataset into `(kept, holdout)` parts of sizes
/// `ceil(N * (1 - f))` and `floor(N * f)`, disjoint and covering the input,
/// deterministically for a given seed.
pub fn split(
    dataset: &LogitDataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(LogitDataset, LogitDataset)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::validation(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let n = dataset.len();
    let n_holdout = floor_with_guard(n as f64 * holdout_fraction);
    let n_keep = n - n_holdout;
    if n_holdout == 0 || n_keep == 0 {
        return Err(Error::validation(format!(
            "split of {n} samples at fraction {holdout_fraction} would leave an empty part \
             ({n_keep} kept / {n_holdout} held out)"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut keep: Vec<usize> = indices[..n_keep].to_vec();
    let mut holdout: Vec<usize> = indices[n_keep..].to_vec();
    keep.sort_unstable();
    holdout.sort_unstable();
    Ok((dataset.subset(&keep)?, dataset.subset(&holdout)?))
}

// floor(x), except values within 1e-9 of an integer snap to it so that
// fractions like 0.3 (not representable in binary) still produce the
// mathematically intended part sizes.
fn floor_with_guard(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Assign each of `n_samples` to one of `k` validation folds.
pub fn make_folds(n_samples: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::validation(format!("fold count must be at least 2, got {k}")));
    }
    if k > n_samples {
        return Err(Error::validation(format!(
            "cannot make {k} folds from {n_samples} samples"
        )));
    }
    let mut perm: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);

    let base = n_samples / k;
    let remainder = n_samples % k;
    let mut assignments = vec![0u32; n_samples];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        for &sample in &perm[pos..pos + size] {
            assignments[sample] = fold as u32;
        }
        pos += size;
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LogitDataset {
        LogitDataset::new(vec![0.0, 0.0], vec![0], 2, 2).unwrap()
    }

    #[test]
    fn smallest_valid_binary_file() {
        let bytes = encode_binary(&small());
        let ds = parse_binary(&bytes).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.row(0), &[0.0, 0.0]);
        assert_eq!(ds.label(0), 0);
    }

    #[test]
    fn csv_single_row_parse() {
        let ds = parse_csv("logit_0,logit_1,label\n1.5,-0.5,1\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.logit_dim(), 2);
        assert_eq!(ds.row(0), &[1.5, -0.5]);
        assert_eq!(ds.label(0), 1);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = LogitDataset::new(vec![0.0; 10], vec![0, 7], 5, 5).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn non_finite_logit_rejected() {
        for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
            let err = LogitDataset::new(vec![0.0, bad], vec![0], 2, 2).unwrap_err();
            assert!(matches!(err, Error::Validation(_)));
        }
    }

    #[test]
    fn mismatched_dim_rejected() {
        let err = LogitDataset::new(vec![0.0; 3], vec![0], 3, 2);
        assert!(err.is_err());
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let ds = LogitDataset::new(
            vec![1.0 / 3.0, -2.75, 1e-30, 37.5, 0.1, -0.0],
            vec![1, 2],
            3,
            3,
        )
        .unwrap();
        let back = parse_binary(&encode_binary(&ds)).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.logits().iter().zip(ds.logits()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_round_trip_reproduces_one_third() {
        let ds = LogitDataset::new(vec![1.0 / 3.0, 0.2], vec![0], 2, 2).unwrap();
        let back = parse_csv(&encode_csv(&ds)).unwrap();
        assert!((back.row(0)[0] - 1.0f32 / 3.0).abs() < 1e-9);
        assert_eq!(back.row(0)[0].to_bits(), (1.0f32 / 3.0).to_bits());
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let err = save_logits(&small(), "/nonexistent-dir/x.glz", DataFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_binary(&small());
        bytes[0] = b'X';
        assert!(matches!(parse_binary(&bytes).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = encode_binary(&small());
        assert!(matches!(
            parse_binary(&bytes[..bytes.len() - 1]).unwrap_err(),
            Error::Format(_)
        ));
    }

    #[test]
    fn csv_header_mismatch_is_format_error() {
        assert!(matches!(
            parse_csv("a,b,label\n0,0,0\n").unwrap_err(),
            Error::Format(_)
        ));
        assert!(matches!(
            parse_csv("logit_0,logit_1\n0,0\n").unwrap_err(),
            Error::Format(_)
        ));
    }

    fn dataset_of(n: usize) -> LogitDataset {
        let logits: Vec<f32> = (0..n * 2).map(|i| i as f32).collect();
        LogitDataset::new(logits, vec![0; n], 2, 2).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = dataset_of(10);
        let (keep, hold) = split(&ds, 0.2, 17).unwrap();
        assert_eq!(keep.len(), 8);
        assert_eq!(hold.len(), 2);
        // Values are unique, so we can check disjoint coverage by value.
        let mut all: Vec<f32> = keep.logits().to_vec();
        all.extend_from_slice(hold.logits());
        all.sort_by(f32::total_cmp);
        assert_eq!(all, ds.logits());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = dataset_of(23);
        let a = split(&ds, 0.3, 5).unwrap();
        let b = split(&ds, 0.3, 5).unwrap();
        assert_eq!(a, b);
        let c = split(&ds, 0.3, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_empty_part() {
        let ds = dataset_of(1);
        assert!(split(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn folds_divide_exactly() {
        let plan = make_folds(10, 5, 3).unwrap();
        let mut seen = vec![false; 10];
        for f in 0..5 {
            let idx = plan.fold_indices(f);
            assert_eq!(idx.len(), 2);
            for i in idx {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn folds_distribute_remainder() {
        let plan = make_folds(11, 5, 99).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| plan.fold_indices(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_reject_k_above_n() {
        assert!(make_folds(3, 5, 0).is_err());
    }

    #[test]
    fn split_fold_partitions() {
        let plan = make_folds(11, 3, 4).unwrap();
        let (train, val) = plan.split_fold(1);
        assert_eq!(train.len() + val.len(), 11);
        for i in &val {
            assert!(!train.contains(i));
        }
    }
}
