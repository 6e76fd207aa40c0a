//! Dense real linear algebra used by every other module.
//!
//! A row-major `f64` matrix with the handful of factorizations this crate
//! needs: Kronecker products, column-stacking vectorization, an SVD-based
//! pseudoinverse and rank, a symmetric eigensolver, and minimum-norm least
//! squares. The SVD is a one-sided Jacobi and the eigensolver a cyclic
//! Jacobi; at the sizes we care about (a few hundred rows at most) both are
//! simple and accurate to near machine precision.
//!
//! Vectorization convention: `vec` stacks columns, so identities like
//! `kron(b^T, a) * vec(x) = vec(a * x * b)` hold verbatim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix, row-major storage: `data[i * cols + j] = A[i, j]`.
///
/// All entries are finite on construction; constructors reject NaN/Inf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// On-disk form: shape metadata plus nested row-major arrays.
#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Matrix> {
        if r.data.len() != r.rows || r.data.iter().any(|row| row.len() != r.cols) {
            return Err(Error::Input(format!(
                "matrix data does not match declared shape {}x{}",
                r.rows, r.cols
            )));
        }
        Matrix::new(r.rows, r.cols, r.data.into_iter().flatten().collect())
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> MatrixRepr {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: (0..m.rows)
                .map(|i| m.data[i * m.cols..(i + 1) * m.cols].to_vec())
                .collect(),
        }
    }
}

impl Matrix {
    /// Creates a matrix from row-major data. Rejects shape/data mismatch and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "empty matrix");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_raw(
            rows.len(),
            cols,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Column vector from a slice.
    pub fn col_vec(v: &[f64]) -> Self {
        Self::from_raw(v.len(), 1, v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }


    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`. Panics on dimension mismatch; callers exposed to user
    /// input must validate shapes first.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Matrix::from_raw(m, n, out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt: inner dims");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut s = 0.0;
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                out[i * n + j] = s;
            }
        }
        Matrix::from_raw(m, n, out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn: inner dims");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Matrix::from_raw(m, n, out)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add");
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub");
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|a| a * s).collect(),
        )
    }

    /// `self += s * other`, used by the optimizer hot loop.
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies `block` into `self` with its top-left corner at `(i0, j0)`.
    pub fn set_block(&mut self, i0: usize, j0: usize, block: &Matrix) {
        assert!(i0 + block.rows <= self.rows && j0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.data[(i0 + i) * self.cols + (j0 + j)] = block.data[i * block.cols + j];
            }
        }
    }

    pub fn block(&self, i0: usize, j0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(i0 + rows <= self.rows && j0 + cols <= self.cols);
        Matrix::from_fn(rows, cols, |i, j| self.get(i0 + i, j0 + j))
    }

    /// Stacks matrices vertically; all must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Matrix {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        assert!(parts.iter().all(|p| p.cols == cols), "vstack: column count");
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            out.set_block(at, 0, p);
            at += p.rows;
        }
        out
    }

    /// Stacks matrices horizontally; all must share a row count.
    pub fn hstack(parts: &[&Matrix]) -> Matrix {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        assert!(parts.iter().all(|p| p.rows == rows), "hstack: row count");
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            out.set_block(0, at, p);
            at += p.cols;
        }
        out
    }

    /// New matrix keeping only the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        assert!(idx.iter().all(|&j| j < self.cols), "select_columns: index");
        Matrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    /// Column-stacking vectorization: entry `k` is `self[k mod rows, k div rows]`.
    pub fn vec(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Matrix::from_raw(self.rows * self.cols, 1, data)
    }

    /// Inverse of [`Matrix::vec`] for the given target shape.
    pub fn unvec(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
        if v.cols != 1 || v.rows != rows * cols {
            return Err(Error::shape(
                "unvec",
                format!("need {}x1, got {}x{}", rows * cols, v.rows, v.cols),
            ));
        }
        Ok(Matrix::from_fn(rows, cols, |i, j| v.data[j * rows + i]))
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a.get(i, j);
            if s == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out.data[(i * br + p) * (ac * bc) + (j * bc + q)] = s * b.get(p, q);
                }
            }
        }
    }
    out
}

// ── SVD (one-sided Jacobi) ──────────────────────────────────────────

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
///
/// `u` is m x r, `v` is n x r with r = min(m, n); singular values are sorted
/// descending. Columns of `u` belonging to zero singular values are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi SVD. Orthogonalizes column pairs of a working copy of
/// `a` until all pairs are numerically orthogonal; column norms are the
/// singular values.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows < a.cols {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = (a.rows, a.cols);
    // Column-major working copies make the rotations contiguous.
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = 1e-15;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    alpha += u[p][i] * u[p][i];
                    beta += u[q][i] * u[q][i];
                    gamma += u[p][i] * u[q][i];
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[p][i];
                    let uq = u[q][i];
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| u[j].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut um = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (col, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                um.set(i, col, u[j][i] / sigma);
            }
        }
        for i in 0..n {
            vm.set(i, col, v[j][i]);
        }
    }
    Svd { u: um, s, v: vm }
}

/// Default rank/pseudoinverse cutoff: `max(m, n) * eps * sigma_max`.
pub fn default_tol(a: &Matrix, sigma_max: f64) -> f64 {
    a.rows.max(a.cols) as f64 * f64::EPSILON * sigma_max
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values at or below
/// `tol` (`None` selects the default cutoff).
pub fn pinv(a: &Matrix, tol: Option<f64>) -> Matrix {
    let Svd { u, s, v } = svd(a);
    let cutoff = tol.unwrap_or_else(|| default_tol(a, s.first().copied().unwrap_or(0.0)));
    let r = s.len();
    // a^+ = v * diag(1/s) * u^T
    let mut vs = Matrix::zeros(v.rows(), r);
    for j in 0..r {
        if s[j] > cutoff {
            let inv = 1.0 / s[j];
            for i in 0..v.rows() {
                vs.set(i, j, v.get(i, j) * inv);
            }
        }
    }
    vs.matmul_nt(&u)
}

/// Number of singular values strictly above `tol` (default cutoff if `None`).
pub fn rank(a: &Matrix, tol: Option<f64>) -> usize {
    let sv = svd(a).s;
    let cutoff = tol.unwrap_or_else(|| default_tol(a, sv.first().copied().unwrap_or(0.0)));
    sv.iter().filter(|&&x| x > cutoff).count()
}

/// Minimum-Frobenius-norm solution of `min_x ||a x - b||_F`, i.e. `pinv(a) * b`.
pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "lstsq",
            format!("a has {} rows, b has {}", a.rows, b.rows),
        ));
    }
    Ok(pinv(a, None).matmul(b))
}

// ── Symmetric eigendecomposition (cyclic Jacobi) ────────────────────

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// Eigenvalues sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector paired with `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition. The input is symmetrized as
/// `(a + a^T) / 2` before iteration; non-square input is an error.
pub fn sym_eig(a: &Matrix) -> Result<EigResult> {
    if a.rows != a.cols {
        return Err(Error::shape(
            "sym_eig",
            format!("matrix is {}x{}", a.rows, a.cols),
        ));
    }
    let n = a.rows;
    let mut s = Matrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let mut v = Matrix::identity(n);

    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += s.get(p, q) * s.get(p, q);
            }
        }
        if off.sqrt() <= 1e-30 + 1e-15 * s.frobenius_norm() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = s.get(p, p);
                let aqq = s.get(q, q);
                if apq.abs() <= f64::EPSILON * 0.5 * (app.abs() + aqq.abs()) {
                    s.set(p, q, 0.0);
                    s.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let skp = s.get(k, p);
                    let skq = s.get(k, q);
                    s.set(k, p, c * skp - sn * skq);
                    s.set(k, q, sn * skp + c * skq);
                }
                for k in 0..n {
                    let spk = s.get(p, k);
                    let sqk = s.get(q, k);
                    s.set(p, k, c * spk - sn * sqk);
                    s.set(q, k, sn * spk + c * sqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| s.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(EigResult {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        let diff = a.sub(b).max_abs();
        assert!(diff <= tol, "max abs diff {diff} > {tol}");
    }

    #[test]
    fn kron_identity_blocks() {
        let b = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = kron(&Matrix::identity(2), &b);
        assert_eq!(k.rows(), 4);
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(2, 2), 1.0);
        assert_eq!(k.get(0, 2), 0.0);
        assert_eq!(k.get(3, 2), 3.0);
    }

    #[test]
    fn kron_scalar_case() {
        let b = Matrix::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let k = kron(&Matrix::from_rows(&[&[2.0]]), &b);
        assert_close(&k, &b.scale(2.0), 0.0);
    }

    #[test]
    fn vec_is_column_stacking() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.vec().data(), &[1.0, 3.0, 2.0, 4.0]);
        let col = Matrix::col_vec(&[5.0, 6.0, 7.0]);
        assert_eq!(col.vec().data(), col.data());
    }

    #[test]
    fn unvec_round_trip() {
        let a = Matrix::from_fn(3, 5, |i, j| (i * 7 + j) as f64 * 0.37 - 1.0);
        let back = Matrix::unvec(&a.vec(), 3, 5).unwrap();
        assert_close(&back, &a, 0.0);
    }

    #[test]
    fn kron_vec_identity_fixed() {
        // kron(b^T, a) * vec(x) = vec(a * x * b)
        let a = Matrix::from_fn(3, 2, |i, j| (i as f64 - 0.5) * (j as f64 + 1.3));
        let x = Matrix::from_fn(2, 4, |i, j| (i + 2 * j) as f64 * 0.21 - 0.4);
        let b = Matrix::from_fn(4, 3, |i, j| ((i * j) as f64).sin());
        let lhs = kron(&b.transpose(), &a).matmul(&x.vec());
        let rhs = a.matmul(&x).matmul(&b).vec();
        assert_close(&lhs, &rhs, 1e-12);
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        assert_close(&pinv(&Matrix::identity(3), None), &Matrix::identity(3), 1e-12);
        let d = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let expect = Matrix::from_rows(&[&[0.5, 0.0], &[0.0, 0.0]]);
        assert_close(&pinv(&d, None), &expect, 1e-12);
    }

    #[test]
    fn pinv_penrose_on_rank_deficient() {
        // rank-2 4x3 matrix
        let u = Matrix::from_fn(4, 2, |i, j| ((i + 1) as f64).powi(j as i32 + 1) * 0.3);
        let w = Matrix::from_fn(2, 3, |i, j| (i as f64 + 0.7) * (j as f64 - 1.1));
        let a = u.matmul(&w);
        let p = pinv(&a, None);
        let scale = a.frobenius_norm();
        assert!(a.matmul(&p).matmul(&a).sub(&a).max_abs() <= 1e-9 * scale);
        assert!(p.matmul(&a).matmul(&p).sub(&p).max_abs() <= 1e-9 * p.frobenius_norm());
        let ap = a.matmul(&p);
        assert_close(&ap, &ap.transpose(), 1e-9 * scale.max(1.0));
        let pa = p.matmul(&a);
        assert_close(&pa, &pa.transpose(), 1e-9 * scale.max(1.0));
    }

    #[test]
    fn rank_cases() {
        assert_eq!(rank(&Matrix::identity(4), None), 4);
        assert_eq!(rank(&Matrix::zeros(3, 3), None), 0);
        let u = Matrix::col_vec(&[1.0, -2.0, 0.5]);
        let v = Matrix::col_vec(&[3.0, 0.25, -1.0, 2.0]);
        assert_eq!(rank(&u.matmul_nt(&v), None), 1);
    }

    #[test]
    fn sym_eig_diagonal() {
        let d = Matrix::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let e = sym_eig(&d).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 2.0).abs() < 1e-12);
        assert!((e.eigenvalues[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_hand_characteristic() {
        // [[0,1],[1,0]] has eigenvalues -1, 1 from lambda^2 - 1 = 0.
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_reconstruction() {
        let raw = Matrix::from_fn(6, 6, |i, j| ((i * 13 + j * 7) as f64).cos());
        let a = raw.add(&raw.transpose()).scale(0.5);
        let e = sym_eig(&a).unwrap();
        let lam = Matrix::from_fn(6, 6, |i, j| if i == j { e.eigenvalues[i] } else { 0.0 });
        let recon = e.eigenvectors.matmul(&lam).matmul_nt(&e.eigenvectors);
        assert_close(&recon, &a, 1e-9 * (1.0 + a.frobenius_norm()));
        // orthonormal columns
        let vtv = e.eigenvectors.matmul_tn(&e.eigenvectors);
        assert_close(&vtv, &Matrix::identity(6), 1e-9);
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        assert!(sym_eig(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn lstsq_cases() {
        let b = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_close(&lstsq(&Matrix::identity(3), &b).unwrap(), &b, 1e-12);

        // overdetermined: a = (1;1), b = (1;3) -> x = 2
        let a = Matrix::col_vec(&[1.0, 1.0]);
        let rhs = Matrix::col_vec(&[1.0, 3.0]);
        let x = lstsq(&a, &rhs).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-12);

        let sq = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let rhs2 = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let x2 = lstsq(&sq, &rhs2).unwrap();
        assert!(sq.matmul(&x2).sub(&rhs2).max_abs() <= 1e-9);
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matrix_json_round_trip() {
        let a = Matrix::from_fn(2, 3, |i, j| i as f64 + 0.25 * j as f64);
        let text = serde_json::to_string(&a).unwrap();
        assert!(text.contains("\"rows\":2"));
        let back: Matrix = serde_json::from_str(&text).unwrap();
        assert_eq!(a, back);
    }
}
