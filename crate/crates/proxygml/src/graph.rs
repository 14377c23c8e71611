//! Sample–proxy similarity graphs.
//!
//! A training step relates the M batch samples to all C·N proxies through a
//! dense cosine-similarity matrix, then keeps only the k strongest relations
//! per sample. Same-class proxies get a +1 bias *during selection only*, so
//! they win slots whenever their similarity is within 1 of the best negatives;
//! the kept weights are always the raw similarities. The proxy–proxy graph
//! used by the regularizer is dense and never truncated.

use crate::error::{Error, Result};
use crate::matrix::{top_k_indices, Matrix};

/// Dense sample-to-proxy cosine similarities plus the labels on both sides.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    /// M×(C·N) cosine similarities, clamped into [−1, 1].
    pub similarities: Matrix,
    /// Class label of each sample row.
    pub sample_labels: Vec<usize>,
    /// Class label of each proxy column.
    pub proxy_labels: Vec<usize>,
}

/// Truncated similarity graph: per sample row, exactly `k` selected entries
/// keep their raw similarity value and everything else is zero.
#[derive(Debug, Clone)]
pub struct SubgraphMatrix {
    /// M×(C·N) weights; `weights[i][j]` equals the raw similarity for
    /// selected slots and 0 elsewhere.
    pub weights: Matrix,
    /// Selected column indices per row, sorted ascending, length `k` each.
    pub selected: Vec<Vec<usize>>,
    /// Number of slots kept per row.
    pub k: usize,
}

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn check_unit_rows(x: &Matrix, what: &str) -> Result<()> {
    for i in 0..x.rows() {
        let sq: f64 = x.row(i).iter().map(|v| v * v).sum();
        if (sq - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Parameter(format!(
                "{what} row {i} is not unit-normalized (squared norm {sq:.6})"
            )));
        }
    }
    Ok(())
}

/// Builds the directed sample→proxy graph: `similarities = x_s · x_pᵀ` for
/// unit-normalized rows, entries clamped into [−1, 1] to absorb rounding.
pub fn cosine_similarity_graph(
    x_s: &Matrix,
    x_p: &Matrix,
    sample_labels: &[usize],
    proxy_labels: &[usize],
) -> Result<SimilarityGraph> {
    if x_s.cols() != x_p.cols() {
        return Err(Error::Shape(format!(
            "sample dim {} does not match proxy dim {}",
            x_s.cols(),
            x_p.cols()
        )));
    }
    if sample_labels.len() != x_s.rows() {
        return Err(Error::Shape(format!(
            "{} sample labels for {} sample rows",
            sample_labels.len(),
            x_s.rows()
        )));
    }
    if proxy_labels.len() != x_p.rows() {
        return Err(Error::Shape(format!(
            "{} proxy labels for {} proxy rows",
            proxy_labels.len(),
            x_p.rows()
        )));
    }
    check_unit_rows(x_s, "sample embedding")?;
    check_unit_rows(x_p, "proxy")?;

    let mut similarities = Matrix::zeros(x_s.rows(), x_p.rows());
    for i in 0..x_s.rows() {
        let s_row = x_s.row(i);
        let out = similarities.row_mut(i);
        for j in 0..x_p.rows() {
            let mut dot = 0.0;
            for (a, b) in s_row.iter().zip(x_p.row(j)) {
                dot += a * b;
            }
            out[j] = dot.clamp(-1.0, 1.0);
        }
    }
    Ok(SimilarityGraph {
        similarities,
        sample_labels: sample_labels.to_vec(),
        proxy_labels: proxy_labels.to_vec(),
    })
}

/// 0/1 matrix marking sample–proxy pairs that share a class label.
pub fn positive_mask(sample_labels: &[usize], proxy_labels: &[usize]) -> Result<Matrix> {
    if proxy_labels.is_empty() {
        return Err(Error::Parameter("proxy label list is empty".into()));
    }
    let class_count = proxy_labels.iter().max().unwrap() + 1;
    if let Some(&bad) = sample_labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::Parameter(format!(
            "sample label {bad} is outside the proxy class range 0..{class_count}"
        )));
    }
    let mut mask = Matrix::zeros(sample_labels.len(), proxy_labels.len());
    for (i, &y) in sample_labels.iter().enumerate() {
        let row = mask.row_mut(i);
        for (j, &p) in proxy_labels.iter().enumerate() {
            if p == y {
                row[j] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// Number of slots kept per sample row: `k = ⌈r · c · n⌉`, clamped into
/// `1..=c·n`.
pub fn compute_k(r: f64, classes: usize, per_class: usize) -> Result<usize> {
    if !r.is_finite() || r <= 0.0 || r > 1.0 {
        return Err(Error::Parameter(format!(
            "selection ratio must lie in (0, 1], got {r}"
        )));
    }
    if classes == 0 || per_class == 0 {
        return Err(Error::Parameter(
            "class count and proxies per class must be at least 1".into(),
        ));
    }
    let total = classes * per_class;
    let k = (r * total as f64).ceil() as usize;
    Ok(k.clamp(1, total))
}

/// Keeps the `k` strongest entries per row of `similarities + pos` (the
/// positive bias counts for selection only) and stores the *raw* similarity
/// at each kept slot.
pub fn build_subgraphs(graph: &SimilarityGraph, pos: &Matrix, k: usize) -> Result<SubgraphMatrix> {
    let s = &graph.similarities;
    if pos.rows() != s.rows() || pos.cols() != s.cols() {
        return Err(Error::Shape(format!(
            "positive mask is {}x{} but similarities are {}x{}",
            pos.rows(),
            pos.cols(),
            s.rows(),
            s.cols()
        )));
    }
    if k == 0 || k > s.cols() {
        return Err(Error::Parameter(format!(
            "k = {k} is outside 1..={} columns",
            s.cols()
        )));
    }
    let mut weights = Matrix::zeros(s.rows(), s.cols());
    let mut selected = Vec::with_capacity(s.rows());
    let mut scores = vec![0.0; s.cols()];
    for i in 0..s.rows() {
        let s_row = s.row(i);
        for (j, score) in scores.iter_mut().enumerate() {
            *score = s_row[j] + pos.get(i, j);
        }
        let picked = top_k_indices(&scores, k)?;
        let w_row = weights.row_mut(i);
        for &j in &picked {
            w_row[j] = s_row[j];
        }
        selected.push(picked);
    }
    Ok(SubgraphMatrix {
        weights,
        selected,
        k,
    })
}

/// Dense proxy–proxy cosine graph. Exactly symmetric by construction; the
/// diagonal is the self-similarity of a unit row, i.e. 1 up to rounding.
/// No truncation is applied.
pub fn proxy_graph(x_p: &Matrix) -> Result<Matrix> {
    check_unit_rows(x_p, "proxy")?;
    let n = x_p.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut dot = 0.0;
            for (a, b) in x_p.row(i).iter().zip(x_p.row(j)) {
                dot += a * b;
            }
            let v = dot.clamp(-1.0, 1.0);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}
