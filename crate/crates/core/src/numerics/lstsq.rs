use crate::error::{invalid, shape_err, Result};

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "transposed matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let xr = self.row(r);
            let yr = other.row(r);
            for (i, &a) in xr.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(yr) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Sub-matrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            let src = self.row(r);
            for (j, &c) in cols.iter().enumerate() {
                out.data[i * cols.len() + j] = src[c];
            }
        }
        out
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let rows: Vec<usize> = (0..self.rows).collect();
        self.select(&rows, cols)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Outcome of a regularized least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    /// `P×Q` coefficients.
    pub weights: Matrix,
    /// Ridge actually applied (differs from the request after a fallback).
    pub ridge_used: f64,
    /// Set when the requested system was singular and the ridge was raised.
    pub fallback: bool,
    /// Fewer rows than unknowns.
    pub underdetermined: bool,
}

/// In-place Cholesky factorization `A = L·Lᵀ`; `false` when `A` is not
/// numerically positive definite. Only the lower triangle is meaningful on
/// success.
fn cholesky_in_place(a: &mut Matrix) -> bool {
    let n = a.rows;
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let tol = scale.max(f64::MIN_POSITIVE) * 1e-12;
    for j in 0..n {
        let mut d = a.get(j, j);
        {
            let rj = &a.data[j * n..j * n + j];
            d -= rj.iter().map(|v| v * v).sum::<f64>();
        }
        if !(d > tol) {
            return false;
        }
        let d = d.sqrt();
        a.set(j, j, d);
        for i in j + 1..n {
            let (head, tail) = a.data.split_at_mut(i * n);
            let rj = &head[j * n..j * n + j];
            let ri = &mut tail[..n];
            let s: f64 = ri[..j].iter().zip(rj).map(|(x, y)| x * y).sum();
            ri[j] = (ri[j] - s) / d;
        }
    }
    true
}

/// Solve `L·Lᵀ·X = B` given the factor from [`cholesky_in_place`].
fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows;
    let q = b.cols;
    let mut x = b.clone();
    for c in 0..q {
        for i in 0..n {
            let mut s = x.data[i * q + c];
            for k in 0..i {
                s -= l.data[i * n + k] * x.data[k * q + c];
            }
            x.data[i * q + c] = s / l.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x.data[i * q + c];
            for k in i + 1..n {
                s -= l.data[k * n + i] * x.data[k * q + c];
            }
            x.data[i * q + c] = s / l.data[i * n + i];
        }
    }
    x
}

/// Solve `(G + ridge·I)·W = R` for a symmetric positive semi-definite `G`,
/// raising the ridge when the system is singular.
///
/// When `ridge` is zero and the factorization fails the ridge becomes
/// `1e-6·trace(G)/P`, then grows tenfold until the factorization succeeds.
pub fn solve_regularized(gram: &Matrix, rhs: &Matrix, ridge: f64) -> Result<(Matrix, f64, bool)> {
    if gram.rows != gram.cols || gram.rows != rhs.rows {
        return shape_err(format!(
            "normal equations {}x{} with right-hand side {}x{}",
            gram.rows, gram.cols, rhs.rows, rhs.cols
        ));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return invalid(format!("ridge must be a nonnegative finite number, got {ridge}"));
    }
    let p = gram.rows;
    let mut lambda = ridge;
    let mut fallback = false;
    for _ in 0..40 {
        let mut a = gram.clone();
        for i in 0..p {
            a.data[i * p + i] += lambda;
        }
        if cholesky_in_place(&mut a) {
            return Ok((cholesky_solve(&a, rhs), lambda, fallback));
        }
        fallback = true;
        lambda = if lambda == 0.0 {
            let t = gram.trace() / p as f64;
            if t > 0.0 {
                1e-6 * t
            } else {
                1e-6
            }
        } else {
            lambda * 10.0
        };
    }
    invalid("normal equations could not be regularized into a positive-definite system")
}

/// Minimize `‖X·W − Y‖² + ridge·‖W‖²` through the normal equations
/// `(XᵀX + ridge·I)·W = XᵀY`.
pub fn least_squares(x: &Matrix, y: &Matrix, ridge: f64) -> Result<LstsqSolution> {
    if x.rows == 0 || x.cols == 0 {
        return invalid(format!("least squares needs M,P >= 1, got {}x{}", x.rows, x.cols));
    }
    if x.rows != y.rows {
        return shape_err(format!("X has {} rows, Y has {}", x.rows, y.rows));
    }
    let gram = x.t_matmul(x)?;
    let rhs = x.t_matmul(y)?;
    let (weights, ridge_used, fallback) = solve_regularized(&gram, &rhs, ridge)?;
    Ok(LstsqSolution {
        weights,
        ridge_used,
        fallback,
        underdetermined: x.rows < x.cols,
    })
}

/// Same minimizer as [`least_squares`] computed as `Xᵀ(XXᵀ + ridge·I)⁻¹Y`,
/// which is cheaper when `M < P`.
pub fn least_squares_dual(x: &Matrix, y: &Matrix, ridge: f64) -> Result<LstsqSolution> {
    if x.rows == 0 || x.cols == 0 {
        return invalid(format!("least squares needs M,P >= 1, got {}x{}", x.rows, x.cols));
    }
    if x.rows != y.rows {
        return shape_err(format!("X has {} rows, Y has {}", x.rows, y.rows));
    }
    let m = x.rows;
    let mut kernel = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            kernel.data[i * m + j] = v;
            kernel.data[j * m + i] = v;
        }
    }
    let (alpha, ridge_used, fallback) = solve_regularized(&kernel, y, ridge)?;
    Ok(LstsqSolution {
        weights: x.t_matmul(&alpha)?,
        ridge_used,
        fallback,
        underdetermined: x.rows < x.cols,
    })
}

/// `‖X·W − Y‖²`.
pub fn residual_sq(x: &Matrix, w: &Matrix, y: &Matrix) -> Result<f64> {
    let pred = x.matmul(w)?;
    if pred.rows != y.rows || pred.cols != y.cols {
        return shape_err("residual operands disagree");
    }
    Ok(pred
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}
