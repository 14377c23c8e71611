//! Trainable parameter stores: the proxy set and the embedding head.
//!
//! Proxies are kept raw and re-normalized on every forward pass so gradients
//! flow through the normalization; re-projecting after each update would
//! change the optimizer dynamics. The head stands in for a full backbone
//! network over precomputed features — identity for fixed features, linear
//! for a trainable projection.

use crate::error::{Error, Result};
use crate::matrix::{matmul, Matrix};
use crate::rng::seed_rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// The trainable proxy parameters: `per_class` proxies for each of
/// `class_count` classes, stored raw (un-normalized).
#[derive(Debug, Clone)]
pub struct ProxySet {
    /// (C·N)×d raw proxy parameters.
    pub raw: Matrix,
    /// Class of each proxy row: class 0 repeated N times, then class 1, ...
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub per_class: usize,
}

/// Class label sequence for proxies: each class repeated `per_class` times,
/// grouped and ascending.
pub fn proxy_labels(class_count: usize, per_class: usize) -> Vec<usize> {
    (0..class_count)
        .flat_map(|c| std::iter::repeat(c).take(per_class))
        .collect()
}

impl ProxySet {
    /// Draws raw proxies i.i.d. standard normal from the seeded generator.
    /// Post-normalization their directions are uniform on the sphere.
    pub fn init(class_count: usize, per_class: usize, dim: usize, seed: u64) -> Result<Self> {
        if class_count == 0 || per_class == 0 || dim == 0 {
            return Err(Error::Parameter(
                "class count, proxies per class, and dimension must be at least 1".into(),
            ));
        }
        let mut rng = seed_rng(seed);
        let data: Vec<f64> = (0..class_count * per_class * dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let raw = Matrix::from_vec(class_count * per_class, dim, data)?;
        Ok(ProxySet {
            raw,
            labels: proxy_labels(class_count, per_class),
            class_count,
            per_class,
        })
    }

    /// Rebuilds a proxy set around an existing parameter matrix
    /// (checkpoint loading).
    pub fn from_raw(class_count: usize, per_class: usize, raw: Matrix) -> Result<Self> {
        if raw.rows() != class_count * per_class {
            return Err(Error::Shape(format!(
                "{} proxy rows cannot represent {class_count} classes x {per_class} proxies",
                raw.rows()
            )));
        }
        Ok(ProxySet {
            raw,
            labels: proxy_labels(class_count, per_class),
            class_count,
            per_class,
        })
    }

    /// Total number of proxies, C·N.
    pub fn count(&self) -> usize {
        self.class_count * self.per_class
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.raw.cols()
    }

    /// One-hot label matrix: row i has a single 1 at column `labels[i]`.
    pub fn one_hot(&self) -> Matrix {
        let mut y = Matrix::zeros(self.count(), self.class_count);
        for (i, &c) in self.labels.iter().enumerate() {
            y.set(i, c, 1.0);
        }
        y
    }
}

/// Embedding head mapping raw input features to the embedding space.
#[derive(Debug, Clone)]
pub enum EmbeddingHead {
    /// Pass-through; requires input dim == embedding dim.
    Identity { dim: usize },
    /// Single linear layer `features · weight` with a d_in×d_out weight.
    Linear { weight: Matrix },
}

impl EmbeddingHead {
    pub fn identity(dim: usize) -> Self {
        EmbeddingHead::Identity { dim }
    }

    pub fn linear(weight: Matrix) -> Self {
        EmbeddingHead::Linear { weight }
    }

    /// Random linear head: entries N(0, 1/d_in) so outputs start at the same
    /// scale as the inputs.
    pub fn linear_init(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Parameter(
                "head dimensions must be at least 1".into(),
            ));
        }
        let mut rng = seed_rng(seed);
        let scale = 1.0 / (d_in as f64).sqrt();
        let data: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(EmbeddingHead::Linear {
            weight: Matrix::from_vec(d_in, d_out, data)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EmbeddingHead::Identity { dim } => *dim,
            EmbeddingHead::Linear { weight } => weight.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EmbeddingHead::Identity { dim } => *dim,
            EmbeddingHead::Linear { weight } => weight.cols(),
        }
    }

    /// Maps features into embedding space. The identity head returns the
    /// input unchanged (bitwise).
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have dim {} but head expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        match self {
            EmbeddingHead::Identity { .. } => Ok(features.clone()),
            EmbeddingHead::Linear { weight } => matmul(features, weight),
        }
    }

    /// Backward pass: `grad_weight = featuresᵀ · upstream` (linear only) and
    /// `grad_features = upstream · weightᵀ` (upstream itself for identity).
    pub fn backward(&self, features: &Matrix, upstream: &Matrix) -> Result<HeadGradients> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have dim {} but head expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        if upstream.rows() != features.rows() || upstream.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream is {}x{} but forward output was {}x{}",
                upstream.rows(),
                upstream.cols(),
                features.rows(),
                self.output_dim()
            )));
        }
        match self {
            EmbeddingHead::Identity { .. } => Ok(HeadGradients {
                weight: None,
                features: upstream.clone(),
            }),
            EmbeddingHead::Linear { weight } => {
                let d_in = weight.rows();
                let d_out = weight.cols();
                // featuresᵀ · upstream, accumulated in ascending batch order.
                let mut grad_weight = Matrix::zeros(d_in, d_out);
                for b in 0..features.rows() {
                    let f_row = features.row(b);
                    let u_row = upstream.row(b);
                    for i in 0..d_in {
                        let g_row = grad_weight.row_mut(i);
                        for j in 0..d_out {
                            g_row[j] += f_row[i] * u_row[j];
                        }
                    }
                }
                // upstream · weightᵀ
                let mut grad_features = Matrix::zeros(features.rows(), d_in);
                for b in 0..features.rows() {
                    let u_row = upstream.row(b);
                    let g_row = grad_features.row_mut(b);
                    for i in 0..d_in {
                        let w_row = weight.row(i);
                        let mut sum = 0.0;
                        for j in 0..d_out {
                            sum += u_row[j] * w_row[j];
                        }
                        g_row[i] = sum;
                    }
                }
                Ok(HeadGradients {
                    weight: Some(grad_weight),
                    features: grad_features,
                })
            }
        }
    }
}

/// Gradients produced by [`EmbeddingHead::backward`].
#[derive(Debug, Clone)]
pub struct HeadGradients {
    /// Present only for the linear head.
    pub weight: Option<Matrix>,
    pub features: Matrix,
}
