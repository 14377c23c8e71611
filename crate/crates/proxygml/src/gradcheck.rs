//! End-to-end gradient verification by central finite differences.
//!
//! Builds one deterministic batch from the configuration, computes the
//! analytic gradients, then perturbs every trainable scalar — raw proxies,
//! the batch embeddings, and the head weight when the head is linear — and
//! compares slopes. The problem size is capped so a full sweep stays cheap.

use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::data::{load_file, synthetic_clusters, Split};
use crate::error::{Error, Result};
use crate::graph::compute_k;
use crate::loss::{forward, loss_and_gradients, LossSettings};
use crate::matrix::Matrix;
use crate::model::{EmbeddingHead, ProxySet};
use crate::rng::{derive_seed, STREAM_DATA, STREAM_PROXIES};
use crate::train::build_head;

/// Largest batch the checker will sweep.
pub const MAX_CHECK_BATCH: usize = 16;
/// Largest feature/embedding dimension the checker will sweep.
pub const MAX_CHECK_DIM: usize = 32;

/// Finite-difference settings.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Deliberately corrupt one analytic gradient entry; the check must then
    /// fail, proving the checker can catch a wrong gradient.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

/// Outcome of a gradient sweep.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Which scalar was worst, e.g. `proxies[2,5]`.
    pub worst_block: String,
    pub scalars_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Sweeps every trainable scalar of the configured setup.
pub fn gradcheck(cfg: &RunConfig, options: &GradCheckOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    if !(options.step > 0.0 && options.step.is_finite()) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be positive, got {}",
            options.step
        )));
    }
    if !(options.tolerance > 0.0 && options.tolerance.is_finite()) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {}",
            options.tolerance
        )));
    }
    if cfg.batch_size > MAX_CHECK_BATCH {
        return Err(Error::Parameter(format!(
            "gradient checking is capped at batch_size {MAX_CHECK_BATCH}, got {}",
            cfg.batch_size
        )));
    }
    if cfg.d_embed > MAX_CHECK_DIM {
        return Err(Error::Parameter(format!(
            "gradient checking is capped at d_embed {MAX_CHECK_DIM}, got {}",
            cfg.d_embed
        )));
    }

    let dataset = match cfg.data_source() {
        DataSource::Synthetic => synthetic_clusters(
            cfg.classes,
            cfg.per_class,
            cfg.d_in,
            cfg.noise_sigma,
            derive_seed(cfg.seed, STREAM_DATA),
        )?,
        DataSource::File(path) => load_file(&path)?,
    };
    if dataset.dim() > MAX_CHECK_DIM {
        return Err(Error::Parameter(format!(
            "gradient checking is capped at input dimension {MAX_CHECK_DIM}, got {}",
            dataset.dim()
        )));
    }
    let train = dataset.indices_of(Split::Train);
    if train.len() < cfg.batch_size {
        return Err(Error::Parameter(format!(
            "batch_size {} exceeds the {} train items",
            cfg.batch_size,
            train.len()
        )));
    }
    let batch: Vec<usize> = train[..cfg.batch_size].to_vec();
    let (features, labels) = dataset.gather(&batch)?;

    let head = build_head(cfg, dataset.dim())?;
    let proxies = ProxySet::init(
        dataset.class_count,
        cfg.proxies_per_class,
        cfg.d_embed,
        derive_seed(cfg.seed, STREAM_PROXIES),
    )?;
    let k = compute_k(cfg.ratio, dataset.class_count, cfg.proxies_per_class)?;
    let settings = LossSettings {
        k,
        lambda: cfg.lambda,
        use_pos_mask: cfg.use_pos_mask,
        use_mask_softmax: cfg.use_mask_softmax,
        use_proxy_reg: cfg.use_proxy_reg,
    };

    let embedded = head.forward(&features)?;
    let bundle = loss_and_gradients(&embedded, &proxies, &labels, &settings)?;
    let head_grads = head.backward(&features, &bundle.grad_embeddings_raw)?;
    let mut grad_proxies = bundle.grad_proxies_raw.clone();
    if options.corrupt {
        let v = grad_proxies.get(0, 0);
        grad_proxies.set(0, 0, v + 1e-2);
    }

    let h = options.step;
    let loss_of = |embedded: &Matrix, proxies: &ProxySet| -> Result<f64> {
        Ok(forward(embedded, proxies, &labels, &settings)?.total_loss)
    };

    let mut worst = (0.0f64, String::from("none"));
    let mut scalars = 0usize;
    let note = |err: f64, block: &str, row: usize, col: usize, worst: &mut (f64, String)| {
        if err > worst.0 {
            *worst = (err, format!("{block}[{row},{col}]"));
        }
    };

    // Raw proxies.
    for row in 0..proxies.raw.rows() {
        for col in 0..proxies.raw.cols() {
            let idx = row * proxies.raw.cols() + col;
            let mut plus = proxies.clone();
            plus.raw.data_mut()[idx] += h;
            let mut minus = proxies.clone();
            minus.raw.data_mut()[idx] -= h;
            let numeric = (loss_of(&embedded, &plus)? - loss_of(&embedded, &minus)?) / (2.0 * h);
            let err = rel_err(grad_proxies.get(row, col), numeric);
            note(err, "proxies", row, col, &mut worst);
            scalars += 1;
        }
    }

    // Batch embeddings (the head's output).
    for row in 0..embedded.rows() {
        for col in 0..embedded.cols() {
            let idx = row * embedded.cols() + col;
            let mut plus = embedded.clone();
            plus.data_mut()[idx] += h;
            let mut minus = embedded.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (loss_of(&plus, &proxies)? - loss_of(&minus, &proxies)?) / (2.0 * h);
            let err = rel_err(bundle.grad_embeddings_raw.get(row, col), numeric);
            note(err, "embeddings", row, col, &mut worst);
            scalars += 1;
        }
    }

    // Head weight, through the whole pipeline.
    if let (EmbeddingHead::Linear { weight }, Some(grad_weight)) =
        (&head, head_grads.weight.as_ref())
    {
        for row in 0..weight.rows() {
            for col in 0..weight.cols() {
                let idx = row * weight.cols() + col;
                let mut plus = weight.clone();
                plus.data_mut()[idx] += h;
                let mut minus = weight.clone();
                minus.data_mut()[idx] -= h;
                let emb_plus = EmbeddingHead::linear(plus).forward(&features)?;
                let emb_minus = EmbeddingHead::linear(minus).forward(&features)?;
                let numeric =
                    (loss_of(&emb_plus, &proxies)? - loss_of(&emb_minus, &proxies)?) / (2.0 * h);
                let err = rel_err(grad_weight.get(row, col), numeric);
                note(err, "head_weight", row, col, &mut worst);
                scalars += 1;
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err: worst.0,
        worst_block: worst.1,
        scalars_checked: scalars,
        tolerance: options.tolerance,
        passed: worst.0 <= options.tolerance,
    })
}
