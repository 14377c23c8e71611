//! Reverse label propagation and the training losses.
//!
//! Forward: per-sample truncated similarities are aggregated per class
//! (`z = w · yᵖ`), turned into prediction scores by a mask softmax in which
//! zero entries contribute neither mass nor gradient, and scored by cross
//! entropy. Proxies are additionally self-classified over the dense
//! proxy–proxy graph (plain softmax — that graph is never truncated) and the
//! two losses combine as `l_s + lambda · l_p`.
//!
//! Backward is fully analytic. The top-k selection is held fixed (it is
//! piecewise constant in the inputs), gradients flow only through the kept
//! similarity values and the proxy graph, and both parameter gradients are
//! reported with respect to the RAW (pre-normalization) matrices.

use crate::error::{Error, Result};
use crate::graph::{build_subgraphs, cosine_similarity_graph, positive_mask, proxy_graph, SubgraphMatrix};
use crate::matrix::{l2_normalize_backward, l2_normalize_rows, matmul, Matrix};
use crate::model::ProxySet;

/// Entries of `z` closer to zero than this count as exact zeros for the mask.
/// True zeros only arise from unselected columns; the tolerance absorbs
/// accumulated rounding in the column sums.
pub const MASK_ZERO_TOLERANCE: f64 = 1e-15;

/// Prediction scores are clamped below at this floor before taking logs, so a
/// sample whose true class was masked out yields a large finite loss instead
/// of an infinite one.
pub const SCORE_FLOOR: f64 = 1e-12;

/// Per-class outputs, softmax mask, and prediction scores for a batch.
#[derive(Debug, Clone)]
pub struct PredictionBundle {
    /// M×C cumulative similarity toward each class.
    pub outputs: Matrix,
    /// M×C 0/1 mask; 0 exactly where the output is zero.
    pub mask: Matrix,
    /// M×C prediction scores; each row sums to 1 over unmasked entries and is
    /// exactly 0 at masked ones.
    pub scores: Matrix,
}

/// Aggregates selected similarities per class: `z = w.weights · y_p`.
/// `z[i][c]` is the cumulative similarity from sample `i` to the selected
/// proxies of class `c`.
pub fn reverse_label_propagation(w: &SubgraphMatrix, y_p: &Matrix) -> Result<Matrix> {
    validate_one_hot(y_p)?;
    if w.weights.cols() != y_p.rows() {
        return Err(Error::Shape(format!(
            "{} weight columns but {} one-hot rows",
            w.weights.cols(),
            y_p.rows()
        )));
    }
    matmul(&w.weights, y_p)
}

fn validate_one_hot(y_p: &Matrix) -> Result<()> {
    for i in 0..y_p.rows() {
        let mut ones = 0usize;
        for &v in y_p.row(i) {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::Parameter(format!(
                    "one-hot row {i} contains {v}, expected only 0 or 1"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::Parameter(format!(
                "one-hot row {i} has {ones} ones, expected exactly 1"
            )));
        }
    }
    Ok(())
}

/// Softmax restricted to nonzero entries. Masked entries receive score 0 and
/// never enter the normalizer; the row max over unmasked entries is
/// subtracted before exponentiation for stability.
///
/// # Errors
/// A row whose entries are all zero has no unmasked entry to normalize over
/// and is reported as a degenerate row.
pub fn mask_softmax(z: &Matrix) -> Result<PredictionBundle> {
    let mut mask = Matrix::zeros(z.rows(), z.cols());
    let mut scores = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let z_row = z.row(i);
        let mut row_max = f64::NEG_INFINITY;
        for &v in z_row {
            if v.abs() >= MASK_ZERO_TOLERANCE {
                row_max = row_max.max(v);
            }
        }
        if row_max == f64::NEG_INFINITY {
            return Err(Error::Degenerate(format!(
                "row {i} of the class outputs is entirely zero; no class to score"
            )));
        }
        let mask_row = mask.row_mut(i);
        for (j, &v) in z_row.iter().enumerate() {
            if v.abs() >= MASK_ZERO_TOLERANCE {
                mask_row[j] = 1.0;
            }
        }
        let mut denom = 0.0;
        let score_row = scores.row_mut(i);
        for (j, &v) in z_row.iter().enumerate() {
            if mask_row[j] == 1.0 {
                let e = (v - row_max).exp();
                score_row[j] = e;
                denom += e;
            }
        }
        for (j, s) in score_row.iter_mut().enumerate() {
            if mask_row[j] == 1.0 {
                *s /= denom;
            }
        }
    }
    Ok(PredictionBundle {
        outputs: z.clone(),
        mask,
        scores,
    })
}

/// Ordinary softmax over every entry (the "original softmax" ablation path
/// and the proxy-side scoring). The mask is all ones.
pub fn plain_softmax(z: &Matrix) -> PredictionBundle {
    let mut mask = Matrix::zeros(z.rows(), z.cols());
    for v in mask.data_mut() {
        *v = 1.0;
    }
    let mut scores = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let z_row = z.row(i);
        let mut row_max = f64::NEG_INFINITY;
        for &v in z_row {
            row_max = row_max.max(v);
        }
        let mut denom = 0.0;
        let score_row = scores.row_mut(i);
        for (j, &v) in z_row.iter().enumerate() {
            let e = (v - row_max).exp();
            score_row[j] = e;
            denom += e;
        }
        for s in score_row.iter_mut() {
            *s /= denom;
        }
    }
    PredictionBundle {
        outputs: z.clone(),
        mask,
        scores,
    }
}

/// Sample cross entropy plus clamp bookkeeping.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    /// Mean of `−log score_true` over the batch.
    pub value: f64,
    /// Number of rows whose true-class score hit the [`SCORE_FLOOR`] clamp.
    pub clamp_events: u64,
    /// Which rows were clamped; clamped rows contribute a constant loss and
    /// therefore zero gradient.
    pub clamped_rows: Vec<bool>,
}

/// Mean cross entropy of the true-class prediction scores, clamped below at
/// [`SCORE_FLOOR`] before the log.
pub fn sample_loss(bundle: &PredictionBundle, labels: &[usize]) -> Result<SampleLoss> {
    let m = bundle.scores.rows();
    let c = bundle.scores.cols();
    if labels.len() != m {
        return Err(Error::Shape(format!(
            "{} labels for {m} score rows",
            labels.len()
        )));
    }
    let mut sum = 0.0;
    let mut clamp_events = 0u64;
    let mut clamped_rows = vec![false; m];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Parameter(format!(
                "label {y} at row {i} is outside 0..{c}"
            )));
        }
        let p = bundle.scores.get(i, y);
        if p < SCORE_FLOOR {
            clamp_events += 1;
            clamped_rows[i] = true;
            sum += -SCORE_FLOOR.ln();
        } else {
            sum += -p.ln();
        }
    }
    Ok(SampleLoss {
        value: sum / m as f64,
        clamp_events,
        clamped_rows,
    })
}

/// Plain-softmax class scores for each proxy over the dense proxy graph.
fn proxy_prediction_scores(s_p: &Matrix, y_p: &Matrix) -> Result<Matrix> {
    let z_p = matmul(s_p, y_p)?;
    Ok(plain_softmax(&z_p).scores)
}

/// Self-classification cross entropy of the proxies: each proxy's cumulative
/// similarity toward every class (`s_p · y_p`) is scored by a plain softmax
/// and evaluated against the proxy's own class.
pub fn proxy_loss(s_p: &Matrix, y_p: &Matrix, proxy_labels: &[usize]) -> Result<f64> {
    let n = s_p.rows();
    if s_p.cols() != n {
        return Err(Error::Shape(format!(
            "proxy graph must be square, got {}x{}",
            n,
            s_p.cols()
        )));
    }
    if y_p.rows() != n || proxy_labels.len() != n {
        return Err(Error::Shape(format!(
            "proxy graph has {n} rows but one-hot has {} and labels {}",
            y_p.rows(),
            proxy_labels.len()
        )));
    }
    validate_one_hot(y_p)?;
    for i in 0..n {
        if (s_p.get(i, i) - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "proxy graph diagonal entry {i} is {}, expected 1",
                s_p.get(i, i)
            )));
        }
    }
    let scores = proxy_prediction_scores(s_p, y_p)?;
    let mut sum = 0.0;
    for (i, &c) in proxy_labels.iter().enumerate() {
        if c >= scores.cols() {
            return Err(Error::Parameter(format!(
                "proxy label {c} at row {i} is outside 0..{}",
                scores.cols()
            )));
        }
        // Plain softmax scores are strictly positive; no clamp needed.
        sum += -scores.get(i, c).ln();
    }
    Ok(sum / n as f64)
}

/// Combined objective `l_s + lambda · l_p`.
pub fn total_loss(l_s: f64, l_p: f64, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Parameter(format!(
            "lambda must be a finite non-negative scalar, got {lambda}"
        )));
    }
    Ok(l_s + lambda * l_p)
}

/// Loss-pipeline configuration for one forward/backward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    /// Slots kept per sample row (from `compute_k`).
    pub k: usize,
    /// Weight of the proxy regularizer.
    pub lambda: f64,
    /// Favor same-class proxies during selection.
    pub use_pos_mask: bool,
    /// Score with the mask softmax; when off, zeros participate in an
    /// ordinary softmax.
    pub use_mask_softmax: bool,
    /// Include the proxy self-classification regularizer.
    pub use_proxy_reg: bool,
}

/// Everything cached by [`forward`] that [`ForwardPass::backward`] needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    embeddings_raw: Matrix,
    proxies_raw: Matrix,
    sample_labels: Vec<usize>,
    proxy_label_list: Vec<usize>,
    class_count: usize,
    embeddings_unit: Matrix,
    proxies_unit: Matrix,
    selection: SubgraphMatrix,
    predictions: PredictionBundle,
    sample: SampleLoss,
    /// Proxy prediction scores, present when the regularizer is active.
    proxy_score_cache: Option<Matrix>,
    settings: LossSettings,
    /// Mean sample cross entropy.
    pub sample_loss: f64,
    /// Proxy regularizer value (0 when disabled).
    pub proxy_loss: f64,
    /// `sample_loss + lambda · proxy_loss`.
    pub total_loss: f64,
    /// Score-floor clamp events in this batch.
    pub clamp_events: u64,
}

/// Runs the full loss forward pass from raw (pre-normalization) sample
/// embeddings and raw proxies.
pub fn forward(
    embeddings_raw: &Matrix,
    proxies: &ProxySet,
    sample_labels: &[usize],
    settings: &LossSettings,
) -> Result<ForwardPass> {
    if embeddings_raw.rows() == 0 {
        return Err(Error::Parameter("batch is empty".into()));
    }
    if embeddings_raw.cols() != proxies.dim() {
        return Err(Error::Shape(format!(
            "embeddings have dim {} but proxies have dim {}",
            embeddings_raw.cols(),
            proxies.dim()
        )));
    }
    if !settings.lambda.is_finite() || settings.lambda < 0.0 {
        return Err(Error::Parameter(format!(
            "lambda must be a finite non-negative scalar, got {}",
            settings.lambda
        )));
    }
    let (embeddings_unit, _) = l2_normalize_rows(embeddings_raw)?;
    let (proxies_unit, _) = l2_normalize_rows(&proxies.raw)?;
    let graph = cosine_similarity_graph(
        &embeddings_unit,
        &proxies_unit,
        sample_labels,
        &proxies.labels,
    )?;
    let pos = if settings.use_pos_mask {
        positive_mask(sample_labels, &proxies.labels)?
    } else {
        Matrix::zeros(embeddings_raw.rows(), proxies.count())
    };
    let selection = build_subgraphs(&graph, &pos, settings.k)?;
    let y_p = proxies.one_hot();
    let z = reverse_label_propagation(&selection, &y_p)?;
    let predictions = if settings.use_mask_softmax {
        mask_softmax(&z)?
    } else {
        plain_softmax(&z)
    };
    let sample = sample_loss(&predictions, sample_labels)?;

    let reg_enabled = settings.use_proxy_reg;
    let (l_p, proxy_score_cache) = if reg_enabled {
        let s_p = proxy_graph(&proxies_unit)?;
        let l_p = proxy_loss(&s_p, &y_p, &proxies.labels)?;
        let q = proxy_prediction_scores(&s_p, &y_p)?;
        (l_p, Some(q))
    } else {
        (0.0, None)
    };
    let lambda = if reg_enabled { settings.lambda } else { 0.0 };
    let total = total_loss(sample.value, l_p, lambda)?;

    Ok(ForwardPass {
        embeddings_raw: embeddings_raw.clone(),
        proxies_raw: proxies.raw.clone(),
        sample_labels: sample_labels.to_vec(),
        proxy_label_list: proxies.labels.clone(),
        class_count: proxies.class_count,
        embeddings_unit,
        proxies_unit,
        selection,
        sample_loss: sample.value,
        proxy_loss: l_p,
        total_loss: total,
        clamp_events: sample.clamp_events,
        predictions,
        sample,
        proxy_score_cache,
        settings: *settings,
    })
}

/// Gradients of the total loss with respect to the raw inputs.
#[derive(Debug, Clone)]
pub struct LossGradients {
    /// d total / d raw sample embeddings, M×d.
    pub embeddings_raw: Matrix,
    /// d total / d raw proxies, (C·N)×d.
    pub proxies_raw: Matrix,
}

impl ForwardPass {
    pub fn predictions(&self) -> &PredictionBundle {
        &self.predictions
    }

    pub fn selection(&self) -> &SubgraphMatrix {
        &self.selection
    }

    pub fn embeddings_unit(&self) -> &Matrix {
        &self.embeddings_unit
    }

    pub fn proxies_unit(&self) -> &Matrix {
        &self.proxies_unit
    }

    /// Analytic gradient of the total loss, holding the selection fixed.
    ///
    /// Sample branch: for an unmasked class `c` of an unclamped row `i`,
    /// `d l_s / d z[i][c] = (score − 1[y_i = c]) / M`; that gradient lands on
    /// the kept similarity slots and scatters to the unit embeddings and
    /// proxies. Clamped rows contribute a constant loss, hence nothing.
    /// Proxy branch: softmax cross entropy through the dense symmetric proxy
    /// graph. Both branches chain through the normalization backward, so the
    /// returned gradients are with respect to the RAW matrices.
    pub fn backward(&self) -> Result<LossGradients> {
        let m = self.embeddings_raw.rows();
        let d = self.embeddings_raw.cols();
        let cn = self.proxies_raw.rows();

        // d l_s / d z, respecting mask and clamp.
        let mut g_outputs = Matrix::zeros(m, self.class_count);
        let inv_m = 1.0 / m as f64;
        for i in 0..m {
            if self.sample.clamped_rows[i] {
                continue;
            }
            let y = self.sample_labels[i];
            let g_row = g_outputs.row_mut(i);
            for c in 0..self.class_count {
                if self.predictions.mask.get(i, c) == 1.0 {
                    let delta = if c == y { 1.0 } else { 0.0 };
                    g_row[c] = (self.predictions.scores.get(i, c) - delta) * inv_m;
                }
            }
        }

        // Scatter through z = w · y_p onto the kept similarity slots, then
        // through s = x̂_s · x̂_pᵀ onto the unit embeddings and proxies.
        let mut g_emb_unit = Matrix::zeros(m, d);
        let mut g_prox_unit = Matrix::zeros(cn, d);
        for i in 0..m {
            for &j in &self.selection.selected[i] {
                let g = g_outputs.get(i, self.proxy_label_list[j]);
                if g == 0.0 {
                    continue;
                }
                let prox_row = self.proxies_unit.row(j);
                let emb_row = self.embeddings_unit.row(i);
                let g_e = g_emb_unit.row_mut(i);
                for (t, &p) in prox_row.iter().enumerate() {
                    g_e[t] += g * p;
                }
                let g_p = g_prox_unit.row_mut(j);
                for (t, &e) in emb_row.iter().enumerate() {
                    g_p[t] += g * e;
                }
            }
        }

        // Proxy regularizer branch over the dense symmetric graph.
        if let Some(q) = &self.proxy_score_cache {
            if self.settings.lambda > 0.0 {
                let scale = self.settings.lambda / cn as f64;
                // coeff[i][j] = d (lambda·l_p) / d s_p[i][j]
                let mut coeff = Matrix::zeros(cn, cn);
                for i in 0..cn {
                    let row = coeff.row_mut(i);
                    for (j, slot) in row.iter_mut().enumerate() {
                        let c = self.proxy_label_list[j];
                        let delta = if c == self.proxy_label_list[i] { 1.0 } else { 0.0 };
                        *slot = scale * (q.get(i, c) - delta);
                    }
                }
                // s_p[i][j] touches proxies i and j: g(x̂_a) += Σ_j
                // (coeff[a][j] + coeff[j][a]) x̂_j. The diagonal's radial
                // contribution is annihilated by the normalization backward.
                for a in 0..cn {
                    let g_row_idx = a;
                    for j in 0..cn {
                        let w = coeff.get(a, j) + coeff.get(j, a);
                        if w == 0.0 {
                            continue;
                        }
                        let src = self.proxies_unit.row(j);
                        let dst = g_prox_unit.row_mut(g_row_idx);
                        for (t, &v) in src.iter().enumerate() {
                            dst[t] += w * v;
                        }
                    }
                }
            }
        }

        Ok(LossGradients {
            embeddings_raw: l2_normalize_backward(&self.embeddings_raw, &g_emb_unit)?,
            proxies_raw: l2_normalize_backward(&self.proxies_raw, &g_prox_unit)?,
        })
    }
}

/// Scalar losses, gradients, and diagnostics for one batch.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub sample_loss: f64,
    pub proxy_loss: f64,
    pub total_loss: f64,
    pub lambda: f64,
    pub grad_embeddings_raw: Matrix,
    pub grad_proxies_raw: Matrix,
    pub clamp_events: u64,
}

/// One-call forward + backward.
pub fn loss_and_gradients(
    embeddings_raw: &Matrix,
    proxies: &ProxySet,
    sample_labels: &[usize],
    settings: &LossSettings,
) -> Result<LossBundle> {
    let pass = forward(embeddings_raw, proxies, sample_labels, settings)?;
    let grads = pass.backward()?;
    Ok(LossBundle {
        sample_loss: pass.sample_loss,
        proxy_loss: pass.proxy_loss,
        total_loss: pass.total_loss,
        lambda: if pass.settings.use_proxy_reg {
            pass.settings.lambda
        } else {
            0.0
        },
        grad_embeddings_raw: grads.embeddings_raw,
        grad_proxies_raw: grads.proxies_raw,
        clamp_events: pass.clamp_events,
    })
}
