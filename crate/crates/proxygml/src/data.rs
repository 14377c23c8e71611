//! Datasets: synthetic Gaussian clusters, CSV and binary file formats,
//! train/test splits, and deterministic epoch batching.
//!
//! CSV layout: header `label,f0,...,f{d-1}`, optionally with a `split`
//! column between the label and the features (written by the trainer so a
//! saved dataset keeps its held-out items). Labels are arbitrary tokens,
//! re-indexed densely in order of first appearance.
//!
//! Binary layout (little endian): magic `PGML`, version u32, item count u32,
//! dimension u32, then per item a u32 dense label and `d` f32 features.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{l2_normalize_rows, Matrix};
use crate::rng::seed_rng;

/// Magic prefix of the binary dataset format.
pub const DATA_MAGIC: &[u8; 4] = b"PGML";
/// Current binary dataset version.
pub const DATA_VERSION: u32 = 1;

/// Which split an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An in-memory labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// n×d feature matrix (raw, not normalized).
    pub features: Matrix,
    /// Dense labels in `0..class_count`.
    pub labels: Vec<usize>,
    /// Per-item split assignment.
    pub split: Vec<Split>,
    pub class_count: usize,
    /// Original label token for each dense label.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Indices of the items in `split`, in dataset order.
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Copies the selected rows into a fresh feature matrix + label vector.
    pub fn gather(&self, indices: &[usize]) -> Result<(Matrix, Vec<usize>)> {
        let d = self.dim();
        let mut features = Matrix::zeros(indices.len(), d);
        let mut labels = Vec::with_capacity(indices.len());
        for (out, &idx) in indices.iter().enumerate() {
            if idx >= self.len() {
                return Err(Error::Parameter(format!(
                    "item index {idx} is outside the dataset of {} items",
                    self.len()
                )));
            }
            let src = self.features.row(idx);
            let dst = features.row_mut(out);
            dst.copy_from_slice(src);
            labels.push(self.labels[idx]);
        }
        Ok((features, labels))
    }

    /// Marks the last `test_classes` dense classes as the test split and the
    /// rest as train (the class-disjoint evaluation protocol for file data).
    pub fn assign_split_by_classes(&mut self, test_classes: usize) -> Result<()> {
        if test_classes == 0 || test_classes >= self.class_count {
            return Err(Error::Parameter(format!(
                "test_classes must be in 1..{} (class count), got {test_classes}",
                self.class_count
            )));
        }
        let boundary = self.class_count - test_classes;
        for i in 0..self.len() {
            self.split[i] = if self.labels[i] < boundary {
                Split::Train
            } else {
                Split::Test
            };
        }
        Ok(())
    }
}

/// Draws `class_count` unit-norm cluster centers and `per_class` items per
/// class at `center + noise_sigma · ε`, ε standard normal. Items are in
/// class-major order; within each class the first ⌈per_class/2⌉ items are
/// the train split and the rest the test split.
pub fn synthetic_clusters(
    class_count: usize,
    per_class: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 {
        return Err(Error::Parameter(format!(
            "synthetic data needs at least 2 classes, got {class_count}"
        )));
    }
    if per_class < 2 {
        return Err(Error::Parameter(format!(
            "synthetic data needs at least 2 items per class, got {per_class}"
        )));
    }
    if dim == 0 {
        return Err(Error::Parameter("feature dimension must be positive".into()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::Parameter(format!(
            "noise sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    let mut rng = seed_rng(seed);
    let raw_centers = Matrix::from_vec(
        class_count,
        dim,
        (0..class_count * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )?;
    let (centers, _) = l2_normalize_rows(&raw_centers)?;

    let n = class_count * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    let train_per_class = per_class.div_ceil(2);
    for class in 0..class_count {
        for item in 0..per_class {
            let row = class * per_class + item;
            let dst = features.row_mut(row);
            for (t, &c) in centers.row(class).iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                dst[t] = c + noise_sigma * noise;
            }
            labels.push(class);
            split.push(if item < train_per_class {
                Split::Train
            } else {
                Split::Test
            });
        }
    }
    Ok(Dataset {
        features,
        labels,
        split,
        class_count,
        label_names: (0..class_count).map(|c| c.to_string()).collect(),
    })
}

fn split_token(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Writes the dataset as CSV with a split column:
/// `label,split,f0,...,f{d-1}`. Feature values use the shortest decimal
/// representation that parses back to the identical f64.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("label,split");
    for t in 0..dataset.dim() {
        out.push_str(&format!(",f{t}"));
    }
    out.push('\n');
    for i in 0..dataset.len() {
        out.push_str(&dataset.label_names[dataset.labels[i]]);
        out.push(',');
        out.push_str(split_token(dataset.split[i]));
        for &v in dataset.features.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a CSV dataset. The header must be `label,f0,...,f{d-1}` or
/// `label,split,f0,...,f{d-1}`; without a split column every item lands in
/// the train split. Label tokens are re-indexed densely in first-seen order.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty file: missing header".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.first() != Some(&"label") {
        return Err(Error::Parse(format!(
            "header must start with 'label', got '{header}'"
        )));
    }
    let has_split = fields.get(1) == Some(&"split");
    let feature_start = if has_split { 2 } else { 1 };
    let d = fields.len().saturating_sub(feature_start);
    if d == 0 {
        return Err(Error::Parse("header declares no feature columns".into()));
    }
    for (t, name) in fields[feature_start..].iter().enumerate() {
        let expect = format!("f{t}");
        if *name != expect {
            return Err(Error::Parse(format!(
                "feature column {} is named '{name}', expected '{expect}'",
                t + feature_start
            )));
        }
    }

    let mut label_names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    let mut values = Vec::new();
    let mut n = 0usize;
    for (line_idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = line_idx + 1;
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != fields.len() {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, got {}",
                fields.len(),
                row.len()
            )));
        }
        let token = row[0];
        let dense = match label_names.iter().position(|t| t == token) {
            Some(idx) => idx,
            None => {
                label_names.push(token.to_string());
                label_names.len() - 1
            }
        };
        labels.push(dense);
        split.push(if has_split {
            match row[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Parse(format!(
                        "line {line_no}: unknown split '{other}', expected 'train' or 'test'"
                    )))
                }
            }
        } else {
            Split::Train
        });
        for (t, tok) in row[feature_start..].iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::Parse(format!("line {line_no}: feature f{t} is not a number: '{tok}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "line {line_no}: feature f{t} is not finite"
                )));
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(Dataset {
        features: Matrix::from_vec(n, d, values)?,
        class_count: label_names.len(),
        labels,
        split,
        label_names,
    })
}

/// Writes the binary dataset format. Features are stored as f32; the split
/// is not stored (loading assigns everything to the train split).
pub fn save_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(DATA_MAGIC);
    buf.extend_from_slice(&DATA_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.dim() as u32).to_le_bytes());
    for i in 0..dataset.len() {
        buf.extend_from_slice(&(dataset.labels[i] as u32).to_le_bytes());
        for &v in dataset.features.row(i) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads the binary dataset format.
pub fn load_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, len: usize| -> Result<&[u8]> {
        let end = *off + len;
        if end > bytes.len() {
            return Err(Error::Parse(format!(
                "truncated binary dataset: wanted {end} bytes, file has {}",
                bytes.len()
            )));
        }
        let s = &bytes[*off..end];
        *off = end;
        Ok(s)
    };
    let magic = take(&mut off, 4)?;
    if magic != DATA_MAGIC {
        return Err(Error::Parse(format!(
            "bad magic {magic:?}, expected {DATA_MAGIC:?}"
        )));
    }
    let read_u32 = |off: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
    };
    let version = read_u32(&mut off)?;
    if version != DATA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported binary dataset version {version}"
        )));
    }
    let n = read_u32(&mut off)? as usize;
    let d = read_u32(&mut off)? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Parse(format!("empty binary dataset ({n} items, dim {d})")));
    }
    let mut labels_raw = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        labels_raw.push(read_u32(&mut off)? as usize);
        for t in 0..d {
            let v = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "item {i} feature f{t} is not finite"
                )));
            }
            values.push(v as f64);
        }
    }
    if off != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after the last record",
            bytes.len() - off
        )));
    }
    // Dense re-index in first-seen order, mirroring the CSV loader.
    let mut label_names: Vec<String> = Vec::new();
    let mut dense_of: Vec<Option<usize>> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for &raw in &labels_raw {
        if raw >= dense_of.len() {
            dense_of.resize(raw + 1, None);
        }
        let dense = match dense_of[raw] {
            Some(d) => d,
            None => {
                label_names.push(raw.to_string());
                dense_of[raw] = Some(label_names.len() - 1);
                label_names.len() - 1
            }
        };
        labels.push(dense);
    }
    Ok(Dataset {
        features: Matrix::from_vec(n, d, values)?,
        class_count: label_names.len(),
        labels,
        split: vec![Split::Train; n],
        label_names,
    })
}

/// Loads a dataset file, picking the format by extension: `.csv` (any case)
/// is parsed as CSV, everything else as the binary format.
pub fn load_file(path: &Path) -> Result<Dataset> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

/// Shuffles the train indices each epoch and yields fixed-size batches; a
/// final short batch is dropped, so every batch has exactly `batch_size`
/// items.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    indices: Vec<usize>,
    batch_size: usize,
}

impl EpochSampler {
    pub fn new(indices: Vec<usize>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if batch_size > indices.len() {
            return Err(Error::Parameter(format!(
                "batch size {batch_size} exceeds the {} train items",
                indices.len()
            )));
        }
        Ok(Self {
            indices,
            batch_size,
        })
    }

    /// One epoch of batches, consuming randomness from `rng`.
    pub fn epoch(&self, rng: &mut ChaCha12Rng) -> Vec<Vec<usize>> {
        let mut order = self.indices.clone();
        order.shuffle(rng);
        order
            .chunks(self.batch_size)
            .filter(|c| c.len() == self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }
}
