//! Dense row-major matrices and small numeric primitives.
//!
//! Everything is `f64`. The matrix type is deliberately minimal: the
//! experiments only need affine maps, a handful of GEMM shapes for the
//! batched training path, and a closed-form least-squares line fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "flat buffer has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Dimension("ragged row lengths".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Computes `W x + b` (with `b` treated as zero when absent).
pub fn affine(w: &Matrix, x: &[f64], b: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != w.cols {
        return Err(Error::Dimension(format!(
            "affine: matrix is {}x{}, vector has length {}",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    if let Some(b) = b {
        if b.len() != w.rows {
            return Err(Error::Dimension(format!(
                "affine: matrix has {} rows, bias has length {}",
                w.rows,
                b.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let mut acc = b.map_or(0.0, |b| b[r]);
        for (wv, xv) in w.row(r).iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    Ok(out)
}

/// `c += a * b` for row-major slices, `a` is m x k, `b` is k x n.
///
/// i-k-j loop order: the inner loop is a contiguous axpy over a row of
/// `b`, which vectorizes, and the accumulation over `k` stays in
/// ascending order so results are reproducible and match the
/// per-sample `affine` path bit for bit.
pub fn gemm_nn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c += a^T * b` where `a` is k x m and `b` is k x n (both row-major).
///
/// Accumulates rank-1 updates in ascending `k`, contiguous in the inner
/// loop; used for weight gradients `dW = delta^T X`.
pub fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Ordinary least squares fit of `ys ~ slope * xs + intercept`.
///
/// Closed-form normal equations in centered coordinates; inputs must
/// contain at least two points and not be all-equal in `xs`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "ols_fit: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Parameter("ols_fit needs at least 2 points".into()));
    }
    let span = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if span == 0.0 {
        return Err(Error::Singular("ols_fit: xs are all equal".into()));
    }
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - xbar;
        sxx += dx * dx;
        sxy += dx * (y - ybar);
    }
    if sxx == 0.0 {
        return Err(Error::Singular("ols_fit: zero variance in xs".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, ybar - slope * xbar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(affine(&w, &[3.0, -1.0], None).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn affine_zero_matrix_passes_bias() {
        let w = Matrix::zeros(2, 2);
        let out = affine(&w, &[5.0, -7.0], Some(&[1.0, 2.0])).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn affine_hand_product() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = affine(&w, &[5.0, 6.0], Some(&[0.0, 0.0])).unwrap();
        assert_eq!(out, vec![17.0, 39.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let w = Matrix::zeros(2, 3);
        assert!(affine(&w, &[1.0, 2.0], None).is_err());
        assert!(affine(&w, &[1.0, 2.0, 3.0], Some(&[0.0])).is_err());
    }

    #[test]
    fn affine_is_linear() {
        let w = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![4.0, 0.5, -0.25]]).unwrap();
        let x = [1.0, 2.0, -3.0];
        let z = [0.5, -1.5, 4.0];
        let (a, b) = (2.5, -0.75);
        let combo: Vec<f64> = x.iter().zip(&z).map(|(xi, zi)| a * xi + b * zi).collect();
        let lhs = affine(&w, &combo, None).unwrap();
        let fx = affine(&w, &x, None).unwrap();
        let fz = affine(&w, &z, None).unwrap();
        for i in 0..2 {
            let rhs = a * fx[i] + b * fz[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn gemm_matches_affine() {
        // batched product must agree with the per-row affine path exactly
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[
            vec![0.1, -0.2],
            vec![0.7, 0.9],
            vec![-1.5, 0.33],
        ])
        .unwrap();
        let mut c = vec![0.0; 2 * 2];
        gemm_nn_acc(a.data(), b.data(), &mut c, 2, 3, 2);
        let bt = b.transpose();
        for i in 0..2 {
            let want = affine(&bt, a.row(i), None).unwrap();
            assert_eq!(&c[i * 2..(i + 1) * 2], want.as_slice());
        }
    }

    #[test]
    fn gemm_tn_is_transpose_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.5, 1.5, 2.5], vec![-1.0, 0.0, 1.0], vec![2.0, 2.0, 2.0]])
            .unwrap();
        let mut c = vec![0.0; 2 * 3];
        gemm_tn_acc(a.data(), b.data(), &mut c, 3, 2, 3);
        let at = a.transpose();
        let mut want = vec![0.0; 2 * 3];
        gemm_nn_acc(at.data(), b.data(), &mut want, 2, 3, 3);
        assert_eq!(c, want);
    }

    #[test]
    fn ols_exact_line() {
        let (slope, intercept) = ols_fit(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((slope - 1.0).abs() < 1e-12);
        assert!((intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_hand_normal_equations() {
        let (slope, intercept) = ols_fit(&[1.0, 2.0, 3.0], &[2.0, 3.0, 5.0]).unwrap();
        assert!((slope - 1.5).abs() < 1e-12);
        assert!((intercept - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_ys() {
        let (slope, intercept) = ols_fit(&[1.0, 2.0, 5.0], &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(slope, 0.0);
        assert!((intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ols_degenerate_xs() {
        assert!(matches!(
            ols_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn ols_recovers_linear_data() {
        let xs: Vec<f64> = (0..40).map(|i| -3.0 + 0.37 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -2.25 * x + 0.8125).collect();
        let (slope, intercept) = ols_fit(&xs, &ys).unwrap();
        assert!((slope + 2.25).abs() < 1e-10);
        assert!((intercept - 0.8125).abs() < 1e-10);
    }
}
