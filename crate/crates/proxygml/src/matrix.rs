//! Dense row-major matrix kernels with deterministic arithmetic.
//!
//! All heavier modules (graph construction, losses, optimizer, evaluation)
//! sit on this type. The kernels favor reproducibility over raw speed: every
//! summation runs in a fixed left-to-right order, so results are bit-identical
//! across runs and platforms. Entries are 64-bit floats throughout; gradient
//! checking needs the headroom and performance is secondary at this scale.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Creates a `rows`×`cols` matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a row-major buffer, validating length and that
    /// every entry is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Shape(format!(
                    "row {i} has length {} but row 0 has length {n_cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(n_rows, n_cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Borrows one row as a slice.
    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Mutably borrows one row.
    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Full row-major buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True when the two matrices agree bit-for-bit (distinguishes `0.0`
    /// from `-0.0`; used by reproducibility tests).
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Matrix product `a · b` with a deterministic summation order: each output
/// entry accumulates over the inner dimension left to right.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        // The k-outer / j-inner loop touches `b` row by row for cache
        // friendliness; per output entry the additions still happen in
        // ascending k, i.e. the same left-to-right order as the naive loop.
        for (k, &a_ik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            let out_row = out.row_mut(i);
            for (j, &b_kj) in b_row.iter().enumerate() {
                out_row[j] += a_ik * b_kj;
            }
        }
    }
    Ok(out)
}

/// Norm floor below which a row counts as a zero vector.
const MIN_ROW_NORM: f64 = 1e-12;

/// Scales every row to unit Euclidean norm, returning the normalized matrix
/// and the original row norms (needed by the backward pass).
///
/// # Errors
/// A row with norm below `1e-12` is a degenerate input: it signals a zero
/// feature vector upstream and is rejected rather than epsilon-fixed.
pub fn l2_normalize_rows(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let norm = row_norm(x.row(i));
        if norm < MIN_ROW_NORM {
            return Err(Error::Degenerate(format!(
                "row {i} has norm {norm:.3e}, below the {MIN_ROW_NORM:.0e} floor"
            )));
        }
        for v in out.row_mut(i) {
            *v /= norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Backward pass of row normalization: for each row,
/// `g = (upstream − (upstream · x̂) x̂) / ‖x‖` where `x̂` is the unit row.
/// The radial component of `upstream` is projected out, so the result is
/// orthogonal to `x̂`.
pub fn l2_normalize_backward(x_raw: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if x_raw.rows != upstream.rows || x_raw.cols != upstream.cols {
        return Err(Error::Shape(format!(
            "normalize backward: raw is {}x{} but upstream is {}x{}",
            x_raw.rows, x_raw.cols, upstream.rows, upstream.cols
        )));
    }
    let mut out = Matrix::zeros(x_raw.rows, x_raw.cols);
    for i in 0..x_raw.rows {
        let raw = x_raw.row(i);
        let up = upstream.row(i);
        let norm = row_norm(raw);
        if norm < MIN_ROW_NORM {
            return Err(Error::Degenerate(format!(
                "row {i} has norm {norm:.3e}, below the {MIN_ROW_NORM:.0e} floor"
            )));
        }
        let mut dot = 0.0;
        for (u, r) in up.iter().zip(raw) {
            dot += u * (r / norm);
        }
        let out_row = out.row_mut(i);
        for j in 0..raw.len() {
            let unit = raw[j] / norm;
            out_row[j] = (up[j] - dot * unit) / norm;
        }
    }
    Ok(out)
}

fn row_norm(row: &[f64]) -> f64 {
    let mut sum = 0.0;
    for v in row {
        sum += v * v;
    }
    sum.sqrt()
}

/// Indices of the `k` largest entries of `values`. Ties break toward the
/// smaller index; the returned indices are sorted ascending.
///
/// # Errors
/// `k` must satisfy `1 ≤ k ≤ values.len()`; NaN entries are rejected because
/// they have no deterministic ordering.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > values.len() {
        return Err(Error::Parameter(format!(
            "k = {k} is outside 1..={} for top-k selection",
            values.len()
        )));
    }
    if let Some(pos) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN at index {pos} in top-k input")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seed_rng(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Independent oracle: textbook i/j/k triple loop, k innermost.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut sum = 0.0;
                for k in 0..a.cols() {
                    sum += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, sum);
            }
        }
        out
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn matmul_identity_passthrough() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert!(matmul(&a, &b).unwrap().bit_eq(&b));
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.rows(), 1);
        assert_eq!(c.cols(), 1);
        assert_eq!(c.get(0, 0), 11.0);
    }

    #[test]
    fn matmul_matches_naive_oracle_bitwise() {
        let a = random_matrix(7, 5, 11);
        let b = random_matrix(5, 3, 12);
        assert!(matmul(&a, &b).unwrap().bit_eq(&naive_matmul(&a, &b)));

        // Larger shape, same requirement.
        let a = random_matrix(64, 33, 13);
        let b = random_matrix(33, 64, 14);
        assert!(matmul(&a, &b).unwrap().bit_eq(&naive_matmul(&a, &b)));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn normalize_three_four_five() {
        let x = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (unit, norms) = l2_normalize_rows(&x).unwrap();
        assert!((unit.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((unit.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(norms, vec![5.0]);
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (unit, norms) = l2_normalize_rows(&x).unwrap();
        assert!(unit.bit_eq(&x));
        assert_eq!(norms, vec![1.0]);
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let x = random_matrix(10, 8, 21);
        let (unit, _) = l2_normalize_rows(&x).unwrap();
        for i in 0..unit.rows() {
            let norm: f64 = unit.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "row {i} norm {norm}");
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let x = random_matrix(6, 5, 22);
        let (once, _) = l2_normalize_rows(&x).unwrap();
        let (twice, _) = l2_normalize_rows(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize_rows(&x), Err(Error::Degenerate(_))));
        let tiny = Matrix::from_rows(&[vec![1e-13, 0.0]]).unwrap();
        assert!(matches!(l2_normalize_rows(&tiny), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalize_backward_tangent_passes() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let up = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let g = l2_normalize_backward(&x, &up).unwrap();
        assert_eq!(g.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_backward_radial_killed() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let up = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let g = l2_normalize_backward(&x, &up).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_backward_output_orthogonal_to_unit_row() {
        let x = random_matrix(8, 6, 31);
        let up = random_matrix(8, 6, 32);
        let g = l2_normalize_backward(&x, &up).unwrap();
        let (unit, _) = l2_normalize_rows(&x).unwrap();
        for i in 0..x.rows() {
            let dot: f64 = g.row(i).iter().zip(unit.row(i)).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-10, "row {i} dot {dot}");
        }
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        // Scalar probe loss: L(X) = Σ_ij c_ij · normalize(X)_ij, whose exact
        // gradient is l2_normalize_backward(X, C).
        let x = random_matrix(5, 4, 41);
        let c = random_matrix(5, 4, 42);
        let analytic = l2_normalize_backward(&x, &c).unwrap();
        let loss = |m: &Matrix| -> f64 {
            let (unit, _) = l2_normalize_rows(m).unwrap();
            unit.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for idx in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[idx] += h;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-6, "entry {idx}: analytic {a}, numeric {numeric}");
        }
    }

    #[test]
    fn normalize_backward_shape_mismatch() {
        let x = Matrix::zeros(2, 3);
        let up = Matrix::zeros(2, 4);
        assert!(matches!(
            l2_normalize_backward(&x, &up),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn top_k_basic() {
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn top_k_tie_prefers_smaller_index() {
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.1], 1).unwrap(), vec![0]);
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.5], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn top_k_result_sorted_ascending() {
        let picked = top_k_indices(&[0.3, 0.9, -0.2, 0.8, 0.1], 3).unwrap();
        assert_eq!(picked, vec![0, 1, 3]);
    }

    #[test]
    fn top_k_range_errors() {
        assert!(matches!(
            top_k_indices(&[1.0, 2.0], 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            top_k_indices(&[1.0, 2.0], 3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn top_k_rejects_nan() {
        assert!(matches!(
            top_k_indices(&[1.0, f64::NAN], 1),
            Err(Error::Numeric(_))
        ));
    }

    /// Independent oracle: full sort by (value desc, index asc).
    fn sort_oracle(values: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let mut picked = idx[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        let mut rng = seed_rng(51);
        let values: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(top_k_indices(&values, 59).unwrap(), sort_oracle(&values, 59));

        // Quantized values force plenty of ties.
        let quantized: Vec<f64> = (0..100)
            .map(|_| (rng.gen_range(-1.0..1.0f64) * 4.0).round() / 4.0)
            .collect();
        for k in [1, 7, 50, 100] {
            assert_eq!(
                top_k_indices(&quantized, k).unwrap(),
                sort_oracle(&quantized, k),
                "k = {k}"
            );
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn matrix_strategy(
            rows: std::ops::RangeInclusive<usize>,
            cols: std::ops::RangeInclusive<usize>,
        ) -> impl Strategy<Value = Matrix> {
            (rows, cols).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-2.0f64..2.0, r * c)
                    .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
            })
        }

        proptest! {
            #[test]
            fn matmul_always_matches_naive_oracle(
                a in matrix_strategy(1..=12, 1..=12),
                b_cols in 1usize..=12,
                seed in 0u64..1000,
            ) {
                let b = {
                    let mut rng = seed_rng(seed);
                    let data = (0..a.cols() * b_cols)
                        .map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0))
                        .collect();
                    Matrix::from_vec(a.cols(), b_cols, data).unwrap()
                };
                prop_assert!(matmul(&a, &b).unwrap().bit_eq(&naive_matmul(&a, &b)));
            }

            #[test]
            fn top_k_matches_oracle_with_ties(
                raw in proptest::collection::vec(-8i32..8, 1..40),
                k_frac in 0.0f64..1.0,
            ) {
                let values: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
                let k = 1 + ((values.len() - 1) as f64 * k_frac) as usize;
                prop_assert_eq!(
                    top_k_indices(&values, k).unwrap(),
                    sort_oracle(&values, k)
                );
            }
        }
    }
}
