//! Dense small-matrix kernels.
//!
//! Everything here is built on a one-sided Jacobi SVD. The matrices that show
//! up in the decoupling pipeline are tiny (tens of rows, a handful of
//! columns), so accuracy wins over speed: Jacobi gives singular values with
//! high relative accuracy and an orthogonal basis for free.

use std::fmt;
use std::ops::{Index, IndexMut};

use itertools::Itertools;
use thiserror::Error;

/// Default relative tolerance (against the largest singular value) below which
/// singular values are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Largest column count accepted by [`kruskal_rank`].
pub const KRUSKAL_MAX_COLS: usize = 20;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rank tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error(
        "kruskal rank of a matrix with {cols} columns needs {cols}-choose-k subset checks; \
         refusing above {max} columns (use numerical_rank as an upper bound instead)"
    )]
    TooManyColumns { cols: usize, max: usize },
}

/// Row-major dense real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: "matrix data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(LinalgError::DimensionMismatch {
                    context: "row length",
                    expected: ncols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(nrows, ncols, data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self, LinalgError> {
        let ncols = columns.len();
        let nrows = columns.first().map_or(0, |c| c.as_ref().len());
        if nrows == 0 || ncols == 0 {
            return Err(LinalgError::EmptyMatrix {
                rows: nrows,
                cols: ncols,
            });
        }
        let mut m = Self::zeros(nrows, ncols);
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != nrows {
                return Err(LinalgError::DimensionMismatch {
                    context: "column length",
                    expected: nrows,
                    got: col.len(),
                });
            }
            for (i, &x) in col.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        if m.data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite("matrix data"));
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &x) in values.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    /// Rows as nested vectors, mainly for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "matvec vector length",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| dot(row, x))
            .collect())
    }

    /// `Aᵀx`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "transposed matvec vector length",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks(self.cols).zip(x) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, idx.len().max(1));
        for (dst, &src) in idx.iter().enumerate() {
            for i in 0..self.rows {
                out[(i, dst)] = self[(i, src)];
            }
        }
        out
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale_column(&mut self, j: usize, factor: f64) {
        for i in 0..self.rows {
            self[(i, j)] *= factor;
        }
    }

    /// Largest absolute entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols) {
            write!(f, "  ")?;
            for x in row {
                write!(f, "{x:>12.6} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm, scaled to avoid overflow for large entries.
pub fn norm(a: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ssq: f64 = a.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * ssq.sqrt()
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` sorted in
/// decreasing order. `U` is `rows × k`, `V` is `cols × k`, `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `tol · σ_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.max_singular_value();
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .take_while(|&&s| s > tol * smax)
            .count()
    }

    /// Minimum-norm solution of `min ‖Ax − b‖` keeping the leading `rank`
    /// singular triplets.
    fn solve_truncated(&self, b: &[f64], rank: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.v.rows()];
        for j in 0..rank {
            let coef = (0..self.u.rows()).map(|i| self.u[(i, j)] * b[i]).sum::<f64>()
                / self.singular_values[j];
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * self.v[(i, j)];
            }
        }
        x
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &DenseMatrix) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (m, n) = (a.rows(), a.cols());
    // Work on columns: store Aᵀ row-major so each column is contiguous.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vecs, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols.iter().map(|c| norm(c)).zip(0..n).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = DenseMatrix::zeros(m, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &(sigma, src)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, dst)] = cols[src][i] / sigma;
            }
        }
        for i in 0..n {
            v[(i, dst)] = vecs[src][i];
        }
    }
    Svd {
        u,
        singular_values: s,
        v,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    svd(a).singular_values
}

/// Count of singular values strictly above `tol · σ_max`; zero for the zero
/// matrix.
pub fn numerical_rank(a: &DenseMatrix, tol: f64) -> usize {
    svd(a).rank(tol)
}

/// Output of [`lstsq_min_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqResult {
    pub solution: Vec<f64>,
    pub numerical_rank: usize,
    pub residual_norm: f64,
}

/// Minimum-norm least-squares solution of `Ax ≈ b`.
///
/// Singular values at or below `rank_tol · σ_max` are discarded, which is what
/// selects the minimum-norm member of the solution set when `A` is
/// rank-deficient.
pub fn lstsq_min_norm(
    a: &DenseMatrix,
    b: &[f64],
    rank_tol: f64,
) -> Result<LstsqResult, LinalgError> {
    if b.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            context: "right-hand side length",
            expected: a.rows(),
            got: b.len(),
        });
    }
    if !(rank_tol > 0.0 && rank_tol.is_finite()) {
        return Err(LinalgError::BadTolerance(rank_tol));
    }
    if !a.is_all_finite() {
        return Err(LinalgError::NonFinite("least-squares matrix"));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite("least-squares right-hand side"));
    }
    let dec = svd(a);
    let rank = dec.rank(rank_tol);
    let solution = dec.solve_truncated(b, rank);
    let ax = a.matvec(&solution)?;
    let resid: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    Ok(LstsqResult {
        solution,
        numerical_rank: rank,
        residual_norm: norm(&resid),
    })
}

/// Moore-Penrose pseudo-inverse with relative cutoff `rank_tol`.
pub fn pseudo_inverse(a: &DenseMatrix, rank_tol: f64) -> DenseMatrix {
    let dec = svd(a);
    let rank = dec.rank(rank_tol);
    let mut out = DenseMatrix::zeros(a.cols(), a.rows());
    for k in 0..rank {
        let inv = 1.0 / dec.singular_values[k];
        for i in 0..a.cols() {
            let vik = dec.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..a.rows() {
                out[(i, j)] += vik * dec.u[(j, k)];
            }
        }
    }
    out
}

/// Solves `Ax = b` for symmetric positive definite `A` by Cholesky
/// factorization. Returns `None` when `A` is not numerically positive
/// definite.
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// Kruskal rank: the largest `k` such that every set of `k` columns is
/// linearly independent (numerically, at relative tolerance `tol`).
///
/// Returns 0 when some column is numerically zero relative to the largest
/// column norm. Enumeration stops at the first dependent subset.
pub fn kruskal_rank(a: &DenseMatrix, tol: f64) -> Result<usize, LinalgError> {
    if a.cols() > KRUSKAL_MAX_COLS {
        return Err(LinalgError::TooManyColumns {
            cols: a.cols(),
            max: KRUSKAL_MAX_COLS,
        });
    }
    let col_norms: Vec<f64> = (0..a.cols()).map(|j| norm(&a.column(j))).collect();
    let largest = col_norms.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 || col_norms.iter().any(|&c| c <= tol * largest) {
        return Ok(0);
    }
    let max_k = a.cols().min(a.rows());
    for k in 2..=max_k {
        let all_independent = (0..a.cols())
            .combinations(k)
            .all(|subset| numerical_rank(&a.select_columns(&subset), tol) == k);
        if !all_independent {
            return Ok(k - 1);
        }
    }
    Ok(max_k)
}
