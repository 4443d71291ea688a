//! Minimal dense linear algebra: row-major f64 matrices, products, norms,
//! elementwise maps, and row normalization. The only numeric carrier in the
//! crate.
//!
//! Spectral norms are computed by power iteration on A^T A (only the largest
//! singular value is ever needed), with a deterministic start vector so that
//! certificates are reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[cfg(debug_assertions)]
fn debug_check_finite(data: &[f64], ctx: &str) {
    for (i, v) in data.iter().enumerate() {
        assert!(v.is_finite(), "non-finite value {v} at flat index {i} after {ctx}");
    }
}

#[cfg(not(debug_assertions))]
fn debug_check_finite(_data: &[f64], _ctx: &str) {}

impl Matrix {
    /// Construct from row-major data. Rejects NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::data(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite entry {v} in matrix construction")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::data("ragged rows in matrix construction".to_string()));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Standard matrix product self * other.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::data(format!(
                "matmul dimension mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        debug_check_finite(&out.data, "matmul");
        Ok(out)
    }

    /// self^T * other, without materializing the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::data(format!(
                "transpose_matmul dimension mismatch: ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, a) in arow.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        debug_check_finite(&out.data, "transpose_matmul");
        Ok(out)
    }

    /// self * other^T.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::data(format!(
                "matmul_transpose dimension mismatch: {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let brow = &other.data[j * other.cols..(j + 1) * other.cols];
                let mut s = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    s += a * b;
                }
                out.data[i * other.rows + j] = s;
            }
        }
        debug_check_finite(&out.data, "matmul_transpose");
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::data("add shape mismatch".to_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::data("sub shape mismatch".to_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let data: Vec<f64> = self.data.iter().map(|v| v * c).collect();
        debug_check_finite(&data, "scale");
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// In-place self += c * other. Shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::data("add_scaled shape mismatch".to_string()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        debug_check_finite(&self.data, "add_scaled");
        Ok(())
    }

    pub fn relu(&self) -> Matrix {
        let data = self.data.iter().map(|v| v.max(0.0)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Gradient mask of relu evaluated at `pre`: grad * (pre > 0).
    /// Subgradient at 0 is 0.
    pub fn relu_backward(grad: &Matrix, pre: &Matrix) -> Result<Matrix> {
        if grad.rows != pre.rows || grad.cols != pre.cols {
            return Err(Error::data("relu_backward shape mismatch".to_string()));
        }
        let data = grad
            .data
            .iter()
            .zip(&pre.data)
            .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        Matrix::new(grad.rows, grad.cols, data)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::data("hadamard shape mismatch".to_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Matrix::new(self.rows, self.cols, data)
    }
}

/// eta (x) H with every slice of eta equal to W collapses to H * W.
pub fn apply_shared_weight(h: &Matrix, w: &Matrix) -> Result<Matrix> {
    h.matmul(w)
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITER: usize = 10000;

/// Largest singular value by power iteration on A^T A.
///
/// The start vector is the normalized all-ones vector; if that stalls at zero
/// (orthogonal to the top singular direction or in the kernel), it is
/// perturbed by fixed-seed pseudo-noise so runs stay deterministic.
/// Non-convergence returns an error carrying the last iterate value.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::data("spectral_norm of empty matrix".to_string()));
    }
    if tol <= 0.0 {
        return Err(Error::data("spectral_norm tol must be positive".to_string()));
    }
    let n = a.cols();
    // v <- A^T A v done as two thin products to stay O(rows*cols).
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut sigma_prev = -1.0;
    for iter in 0..max_iter {
        // w = A v
        let mut w = vec![0.0; a.rows()];
        for i in 0..a.rows() {
            let row = a.row(i);
            w[i] = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        // u = A^T w
        let mut u = vec![0.0; n];
        for i in 0..a.rows() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for (uj, x) in u.iter_mut().zip(a.row(i)) {
                *uj += wi * x;
            }
        }
        let lambda = vec_norm(&u);
        if lambda == 0.0 {
            if iter == 0 {
                // ones vector may be orthogonal to the range; deterministic
                // pseudo-random restart (splitmix-style hash of the index).
                let mut any = false;
                for (j, vj) in v.iter_mut().enumerate() {
                    let mut x = (j as u64).wrapping_add(0x9E3779B97F4A7C15);
                    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
                    x ^= x >> 31;
                    *vj = (x as f64 / u64::MAX as f64) - 0.5;
                    any = true;
                }
                if any {
                    let norm = vec_norm(&v);
                    for vj in v.iter_mut() {
                        *vj /= norm;
                    }
                    continue;
                }
            }
            // A^T A v = 0 for a generic v: sigma is 0 (or numerically so).
            return Ok(0.0);
        }
        let sigma = lambda.sqrt();
        for (vj, uj) in v.iter_mut().zip(&u) {
            *vj = uj / lambda;
        }
        if sigma_prev >= 0.0 && (sigma - sigma_prev).abs() <= tol * sigma.max(1e-300) {
            return Ok(sigma);
        }
        sigma_prev = sigma;
    }
    Err(Error::numeric(format!(
        "spectral_norm failed to converge after {max_iter} iterations (last iterate {sigma_prev})"
    )))
}

/// Spectral norm with crate defaults (tol 1e-10, 10000 iterations).
pub fn spectral_norm_default(a: &Matrix) -> Result<f64> {
    spectral_norm(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}

/// Divide each row by its l2 norm; rows with norm <= eps become all-zero.
pub fn row_normalize(a: &Matrix, eps: f64) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let norm = vec_norm(out.row(i));
        let row = out.row_mut(i);
        if norm > eps {
            for v in row.iter_mut() {
                *v /= norm;
            }
        } else {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
    }
    out
}

/// (1/n) 1_n^T H W : column-mean of H times W, a 1xC row.
pub fn mean_readout(h: &Matrix, w: &Matrix) -> Result<Matrix> {
    if h.rows() == 0 {
        return Err(Error::data("mean_readout of empty matrix".to_string()));
    }
    let n = h.rows() as f64;
    let mut mean = Matrix::zeros(1, h.cols());
    for i in 0..h.rows() {
        for (m, v) in mean.row_mut(0).iter_mut().zip(h.row(i)) {
            *m += v / n;
        }
    }
    mean.matmul(w)
}
