//! Third-order tensors and the CP decomposition engine.
//!
//! A [`Tensor3`] of dimensions `n × m × N` stores entry `(i, j, k)` at linear
//! index `i + n·j + n·m·k`, so frontal slice `k` is a contiguous column-major
//! `n × m` block. Unfoldings follow the usual convention where the remaining
//! indices vary with the earlier mode fastest:
//!
//! * mode 1: `n × mN`, column `j + m·k`
//! * mode 2: `m × nN`, column `i + n·k`
//! * mode 3: `N × nm`, column `i + n·j`
//!
//! so that for `T = Σ w_r ∘ v_r ∘ h_r` we have `T₍₁₎ = W (H ⊙ V)ᵀ`,
//! `T₍₂₎ = V (H ⊙ W)ᵀ` and `T₍₃₎ = H (V ⊙ W)ᵀ`.

use std::fmt;

use itertools::Itertools;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, norm, DenseMatrix, LinalgError};
use crate::rng;

/// Relative-error floor below which ALS stops regardless of progress.
pub const ALS_ERROR_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Largest column angle (as a sine) still accepted by [`match_factors`].
pub const MATCH_ANGLE_THRESHOLD: f64 = 1e-3;

/// Rank up to which [`match_factors`] tries every permutation.
const EXHAUSTIVE_MATCH_MAX_RANK: usize = 8;

/// Significance threshold (relative to the column's largest entry) for the
/// sign convention.
const SIGN_SIGNIFICANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor dimensions must be positive, got {0:?}")]
    EmptyDims((usize, usize, usize)),
    #[error("tensor data has {got} entries, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite tensor entry")]
    NonFinite,
    #[error("invalid unfolding mode {0} (expected 1, 2 or 3)")]
    InvalidMode(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid CPD options: {0}")]
    InvalidOptions(String),
    #[error("the zero tensor has rank 0 and nothing to decompose")]
    ZeroTensor,
    #[error("CPD rank must be at least 1")]
    ZeroRank,
    #[error("no rank up to {bound} reaches relative error {fit_tol:e}; error profile: {}", format_profile(.profile))]
    RankNotFound {
        fit_tol: f64,
        bound: usize,
        profile: Vec<(usize, f64)>,
    },
    #[error("factors do not correspond: best assignment leaves a column angle of {worst_angle:e} (threshold {threshold:e})")]
    NoMatch { worst_angle: f64, threshold: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn format_profile(profile: &[(usize, f64)]) -> String {
    profile
        .iter()
        .map(|(r, e)| format!("r={r}: {e:.3e}"))
        .join(", ")
}

/// Dense `n × m × N` real tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self, TensorError> {
        let (n, m, nn) = dims;
        if n == 0 || m == 0 || nn == 0 {
            return Err(TensorError::EmptyDims(dims));
        }
        if data.len() != n * m * nn {
            return Err(TensorError::DataLength {
                expected: n * m * nn,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self, TensorError> {
        Self::new(dims, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    /// Stacks equally sized `n × m` matrices as frontal slices.
    pub fn from_slices(slices: &[DenseMatrix]) -> Result<Self, TensorError> {
        let first = slices
            .first()
            .ok_or(TensorError::EmptyDims((0, 0, 0)))?;
        let (n, m) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(n * m * slices.len());
        for s in slices {
            if (s.rows(), s.cols()) != (n, m) {
                return Err(TensorError::Shape(format!(
                    "slice is {}x{}, expected {n}x{m}",
                    s.rows(),
                    s.cols()
                )));
            }
            for j in 0..m {
                for i in 0..n {
                    data.push(s[(i, j)]);
                }
            }
        }
        Self::new((n, m, slices.len()), data)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let (n, m, _) = self.dims;
        i + n * j + n * m * k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frontal slice `k` as an `n × m` matrix.
    pub fn slice(&self, k: usize) -> DenseMatrix {
        let (n, m, _) = self.dims;
        let mut out = DenseMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                out[(i, j)] = self.get(i, j, k);
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Frobenius norm of `self − other`.
    pub fn distance(&self, other: &Self) -> Result<f64, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::Shape(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let diff: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(norm(&diff))
    }
}

/// Plain-text dump: one frontal slice per block, 17 significant digits.
impl fmt::Display for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, m, nn) = self.dims;
        writeln!(f, "# tensor {n} x {m} x {nn}")?;
        for k in 0..nn {
            writeln!(f, "# slice {k}")?;
            for i in 0..n {
                let row = (0..m).map(|j| format!("{:.16e}", self.get(i, j, k))).join(" ");
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Mode-`mode` unfolding (`mode` ∈ {1, 2, 3}).
pub fn unfold(t: &Tensor3, mode: usize) -> Result<DenseMatrix, TensorError> {
    let (n, m, nn) = t.dims;
    let mut out = match mode {
        1 => DenseMatrix::zeros(n, m * nn),
        2 => DenseMatrix::zeros(m, n * nn),
        3 => DenseMatrix::zeros(nn, n * m),
        _ => return Err(TensorError::InvalidMode(mode)),
    };
    for k in 0..nn {
        for j in 0..m {
            for i in 0..n {
                let x = t.get(i, j, k);
                match mode {
                    1 => out[(i, j + m * k)] = x,
                    2 => out[(j, i + n * k)] = x,
                    _ => out[(k, i + n * j)] = x,
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn refold(
    mat: &DenseMatrix,
    mode: usize,
    dims: (usize, usize, usize),
) -> Result<Tensor3, TensorError> {
    let (n, m, nn) = dims;
    let expected = match mode {
        1 => (n, m * nn),
        2 => (m, n * nn),
        3 => (nn, n * m),
        _ => return Err(TensorError::InvalidMode(mode)),
    };
    if (mat.rows(), mat.cols()) != expected {
        return Err(TensorError::Shape(format!(
            "mode-{mode} unfolding of {dims:?} must be {}x{}, got {}x{}",
            expected.0,
            expected.1,
            mat.rows(),
            mat.cols()
        )));
    }
    let mut t = Tensor3::zeros(dims)?;
    for k in 0..nn {
        for j in 0..m {
            for i in 0..n {
                let off = t.offset(i, j, k);
                t.data[off] = match mode {
                    1 => mat[(i, j + m * k)],
                    2 => mat[(j, i + n * k)],
                    _ => mat[(k, i + n * j)],
                };
            }
        }
    }
    Ok(t)
}

/// Column-wise Kronecker product: column `i` is `a_i ⊗ b_i`.
pub fn khatri_rao(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, TensorError> {
    if a.cols() != b.cols() {
        return Err(TensorError::Shape(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let (p, q, r) = (a.rows(), b.rows(), a.cols());
    let mut out = DenseMatrix::zeros(p * q, r);
    for c in 0..r {
        for i in 0..p {
            let ai = a[(i, c)];
            for j in 0..q {
                out[(i * q + j, c)] = ai * b[(j, c)];
            }
        }
    }
    Ok(out)
}

/// Assembles `Σ_r w_r ∘ v_r ∘ h_r`.
pub fn reconstruct(
    w: &DenseMatrix,
    v: &DenseMatrix,
    h: &DenseMatrix,
) -> Result<Tensor3, TensorError> {
    let r = w.cols();
    if v.cols() != r || h.cols() != r {
        return Err(TensorError::Shape(format!(
            "factor column counts differ: W {}, V {}, H {}",
            r,
            v.cols(),
            h.cols()
        )));
    }
    let (n, m, nn) = (w.rows(), v.rows(), h.rows());
    let mut t = Tensor3::zeros((n, m, nn))?;
    for k in 0..nn {
        for j in 0..m {
            for i in 0..n {
                let s: f64 = (0..r).map(|c| w[(i, c)] * v[(j, c)] * h[(k, c)]).sum();
                let off = t.offset(i, j, k);
                t.data[off] = s;
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdOptions {
    pub max_iters: usize,
    /// Stop when the relative change of the fit error drops below this.
    pub conv_tol: f64,
    pub num_restarts: usize,
    pub rng_seed: u64,
    /// Finish slow ALS runs with damped Gauss-Newton (Levenberg-Marquardt)
    /// steps on all factors at once.
    pub refine: bool,
}

impl Default for CpdOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            conv_tol: 1e-14,
            num_restarts: 5,
            rng_seed: rng::DEFAULT_SEED,
            refine: true,
        }
    }
}

impl CpdOptions {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.max_iters == 0 {
            return Err(TensorError::InvalidOptions("max_iters must be at least 1".into()));
        }
        if !(self.conv_tol > 0.0 && self.conv_tol.is_finite()) {
            return Err(TensorError::InvalidOptions(format!(
                "conv_tol must be positive, got {}",
                self.conv_tol
            )));
        }
        if self.num_restarts == 0 {
            return Err(TensorError::InvalidOptions("num_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Factors of a rank-`r` CP decomposition `T ≈ Σ w_i ∘ v_i ∘ h_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdResult {
    /// `n × r` (output side).
    pub w: DenseMatrix,
    /// `m × r` (input side).
    pub v: DenseMatrix,
    /// `N × r` (one row per sampling point).
    pub h: DenseMatrix,
    pub rank: usize,
    pub rel_error: f64,
    pub iterations: usize,
    pub restart_index: usize,
}

impl CpdResult {
    /// Wraps given factors, e.g. ground truth, without fitting anything.
    pub fn from_factors(
        w: DenseMatrix,
        v: DenseMatrix,
        h: DenseMatrix,
    ) -> Result<Self, TensorError> {
        let rank = w.cols();
        if v.cols() != rank || h.cols() != rank {
            return Err(TensorError::Shape("factor column counts differ".into()));
        }
        Ok(Self {
            w,
            v,
            h,
            rank,
            rel_error: 0.0,
            iterations: 0,
            restart_index: 0,
        })
    }

    pub fn reconstruct(&self) -> Tensor3 {
        reconstruct(&self.w, &self.v, &self.h).expect("factor shapes are consistent")
    }

    /// `‖t − Σ w∘v∘h‖_F / ‖t‖_F`.
    pub fn rel_error_against(&self, t: &Tensor3) -> Result<f64, TensorError> {
        let tn = t.frobenius_norm();
        if tn == 0.0 {
            return Err(TensorError::ZeroTensor);
        }
        Ok(self.reconstruct().distance(t)? / tn)
    }

    /// Puts the factors in the canonical gauge: unit-norm `V` and `W`
    /// columns whose first significant entry is non-negative, all scale and
    /// sign compensation carried by `H`.
    pub fn normalize(&mut self) {
        normalize_factors(&mut self.w, &mut self.v, &mut self.h);
    }
}

fn normalize_factors(w: &mut DenseMatrix, v: &mut DenseMatrix, h: &mut DenseMatrix) {
    for c in 0..w.cols() {
        for side in [&mut *v, &mut *w] {
            let col = side.column(c);
            let nrm = norm(&col);
            if nrm == 0.0 {
                continue;
            }
            let largest = col.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            let first = col
                .iter()
                .copied()
                .find(|x| x.abs() > SIGN_SIGNIFICANCE * largest)
                .unwrap_or(1.0);
            let s = if first < 0.0 { -1.0 / nrm } else { 1.0 / nrm };
            side.scale_column(c, s);
            h.scale_column(c, 1.0 / s);
        }
    }
}

fn random_matrix<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::new(rows, cols, data).expect("normal draws are finite")
}

/// Least-squares update `F = X · pinv(K)ᵀ` solving `min ‖X − F Kᵀ‖`.
fn ls_update(unfolded: &DenseMatrix, kr: &DenseMatrix) -> DenseMatrix {
    let tol = f64::EPSILON * kr.rows().max(kr.cols()) as f64;
    let pinv = linalg::pseudo_inverse(kr, tol);
    unfolded
        .matmul(&pinv.transpose())
        .expect("unfolding and khatri-rao shapes agree")
}

/// ALS hands over to the damped Gauss-Newton phase once an iteration improves
/// the relative error by less than this fraction.
const ALS_SLOW_PROGRESS: f64 = 1e-2;

/// Gauss-Newton stops when ten accepted steps together improve the error by
/// less than this fraction (a local minimum with non-zero residual).
const REFINE_STALL: f64 = 1e-6;
const REFINE_STALL_WINDOW: usize = 10;

/// Runs one restart and returns the result with the per-iteration relative
/// error history (ALS sweeps first, then refinement steps).
pub fn als_restart(
    t: &Tensor3,
    r: usize,
    opts: &CpdOptions,
    restart: usize,
) -> Result<(CpdResult, Vec<f64>), TensorError> {
    opts.validate()?;
    if r == 0 {
        return Err(TensorError::ZeroRank);
    }
    let tnorm = t.frobenius_norm();
    if tnorm == 0.0 {
        return Err(TensorError::ZeroTensor);
    }
    let (n, m, nn) = t.dims();
    let unfoldings = [unfold(t, 1)?, unfold(t, 2)?, unfold(t, 3)?];

    let mut rng = rng::stream_rng(opts.rng_seed, rng::streams::CPD_RESTART_BASE + restart as u64);
    let mut v = random_matrix(m, r, &mut rng);
    let mut w = random_matrix(n, r, &mut rng);
    let mut h = random_matrix(nn, r, &mut rng);

    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut hand_over = false;
    while history.len() < opts.max_iters {
        w = ls_update(&unfoldings[0], &khatri_rao(&h, &v)?);
        v = ls_update(&unfoldings[1], &khatri_rao(&h, &w)?);
        h = ls_update(&unfoldings[2], &khatri_rao(&v, &w)?);
        normalize_factors(&mut w, &mut v, &mut h);

        let err = reconstruct(&w, &v, &h)?.distance(t)? / tnorm;
        history.push(err);
        let change = if prev.is_finite() { (prev - err).abs() / prev } else { f64::INFINITY };
        prev = err;
        if err <= ALS_ERROR_FLOOR || change <= opts.conv_tol {
            break;
        }
        if opts.refine && change < ALS_SLOW_PROGRESS {
            hand_over = true;
            break;
        }
    }
    if hand_over {
        let mut factors = [w, v, h];
        prev = refine(t, &unfoldings, &mut factors, opts, &mut history)?;
        [w, v, h] = factors;
    }

    let result = CpdResult {
        w,
        v,
        h,
        rank: r,
        rel_error: prev,
        iterations: history.len(),
        restart_index: restart,
    };
    Ok((result, history))
}

fn gram(a: &DenseMatrix) -> DenseMatrix {
    a.transpose().matmul(a).expect("square product")
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    DenseMatrix::new(a.rows(), a.cols(), data).expect("same shape")
}

/// Levenberg-Marquardt on all three factors jointly, continuing `history`
/// until the iteration budget is spent, the error floor is reached or
/// progress stalls. Only steps that lower the error are accepted, so the
/// history stays monotone. Returns the final relative error.
fn refine(
    t: &Tensor3,
    unfoldings: &[DenseMatrix; 3],
    factors: &mut [DenseMatrix; 3],
    opts: &CpdOptions,
    history: &mut Vec<f64>,
) -> Result<f64, TensorError> {
    let tnorm = t.frobenius_norm();
    let rel_error = |f: &[DenseMatrix; 3]| -> Result<f64, TensorError> {
        Ok(reconstruct(&f[0], &f[1], &f[2])?.distance(t)? / tnorm)
    };
    let mut err = *history.last().expect("ALS ran at least once");
    let mut lambda = f64::NAN;
    let mut nu = 2.0;
    let mut accepted: Vec<f64> = vec![err];

    while history.len() < opts.max_iters && err > ALS_ERROR_FLOOR {
        let (jtj, grad) = normal_equations(unfoldings, factors)?;
        let diag_max = (0..jtj.rows()).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        if diag_max == 0.0 {
            break;
        }
        if lambda.is_nan() {
            lambda = 1e-3 * diag_max;
        }
        let mut lhs = jtj.clone();
        for i in 0..lhs.rows() {
            lhs[(i, i)] += lambda;
        }
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = match linalg::solve_spd(&lhs, &neg_grad) {
            Some(s) => s,
            None => {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e16 * diag_max {
                    break;
                }
                continue;
            }
        };
        let mut trial = factors.clone();
        let mut offset = 0;
        for f in trial.iter_mut() {
            let cols = f.cols();
            for i in 0..f.rows() {
                for c in 0..cols {
                    f[(i, c)] += step[offset + i * cols + c];
                }
            }
            offset += f.rows() * cols;
        }
        let trial_err = rel_error(&trial)?;
        // gain ratio against the quadratic model, in units of ½‖R‖²
        let scale = 0.5 * tnorm * tnorm;
        let actual = scale * (err * err - trial_err * trial_err);
        let predicted: f64 = 0.5
            * step
                .iter()
                .zip(&grad)
                .map(|(s, g)| s * (lambda * s - g))
                .sum::<f64>();
        if trial_err < err && actual > 0.0 {
            let rho = if predicted > 0.0 { actual / predicted } else { 1.0 };
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            let change = (err - trial_err) / err;
            *factors = trial;
            let [w, v, h] = factors;
            normalize_factors(w, v, h);
            err = trial_err;
            history.push(err);
            accepted.push(err);
            if change <= opts.conv_tol {
                break;
            }
            if accepted.len() > REFINE_STALL_WINDOW {
                let past = accepted[accepted.len() - 1 - REFINE_STALL_WINDOW];
                if (past - err) / past < REFINE_STALL {
                    break;
                }
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e16 * diag_max {
                break;
            }
        }
    }
    Ok(err)
}

/// Gauss-Newton normal matrix `JᵀJ` and gradient `Jᵀr` of
/// `½‖Σ w∘v∘h − T‖²` with respect to `[vec W, vec V, vec H]` (row-major
/// factor entries), assembled from Gram matrices instead of the Jacobian.
fn normal_equations(
    unfoldings: &[DenseMatrix; 3],
    factors: &[DenseMatrix; 3],
) -> Result<(DenseMatrix, Vec<f64>), TensorError> {
    let [w, v, h] = factors;
    let r = w.cols();
    let (gw, gv, gh) = (gram(w), gram(v), gram(h));
    let sizes = [w.rows(), v.rows(), h.rows()];
    let offsets = [0, sizes[0] * r, (sizes[0] + sizes[1]) * r];
    let total = (sizes[0] + sizes[1] + sizes[2]) * r;
    let mut jtj = DenseMatrix::zeros(total, total);

    // diagonal blocks: I ⊗ (Hadamard of the other two Grams)
    let diag_blocks = [hadamard(&gv, &gh), hadamard(&gw, &gh), hadamard(&gw, &gv)];
    for (b, block) in diag_blocks.iter().enumerate() {
        for row in 0..sizes[b] {
            let base = offsets[b] + row * r;
            for c in 0..r {
                for c2 in 0..r {
                    jtj[(base + c, base + c2)] = block[(c, c2)];
                }
            }
        }
    }
    // off-diagonal blocks: entry (p_a[x, c], p_b[y, c']) = A_b[y, c] · A_a[x, c'] · G_other[c, c']
    let pairs = [(0usize, 1usize, &gh), (0, 2, &gv), (1, 2, &gw)];
    for &(a, b, g_other) in &pairs {
        let (fa, fb) = (&factors[a], &factors[b]);
        for x in 0..sizes[a] {
            for y in 0..sizes[b] {
                for c in 0..r {
                    let fbyc = fb[(y, c)];
                    for c2 in 0..r {
                        let val = fbyc * fa[(x, c2)] * g_other[(c, c2)];
                        let (i, j) = (offsets[a] + x * r + c, offsets[b] + y * r + c2);
                        jtj[(i, j)] = val;
                        jtj[(j, i)] = val;
                    }
                }
            }
        }
    }

    let mut grad = Vec::with_capacity(total);
    let krs = [khatri_rao(h, v)?, khatri_rao(h, w)?, khatri_rao(v, w)?];
    for (b, f) in factors.iter().enumerate() {
        let model_part = f.matmul(&diag_blocks[b])?;
        let data_part = unfoldings[b].matmul(&krs[b])?;
        for i in 0..f.rows() {
            for c in 0..r {
                grad.push(model_part[(i, c)] - data_part[(i, c)]);
            }
        }
    }
    Ok((jtj, grad))
}

/// Rank-`r` CP decomposition by alternating least squares with random
/// restarts; the best restart wins, ties broken by restart index.
///
/// Restarts run in parallel but draw from independent derived seeds, so the
/// result does not depend on scheduling. A poor fit is not an error: inspect
/// `rel_error`.
pub fn cpd_als(t: &Tensor3, r: usize, opts: &CpdOptions) -> Result<CpdResult, TensorError> {
    opts.validate()?;
    if r == 0 {
        return Err(TensorError::ZeroRank);
    }
    if t.is_zero() {
        return Err(TensorError::ZeroTensor);
    }
    let runs: Vec<CpdResult> = (0..opts.num_restarts)
        .into_par_iter()
        .map(|restart| als_restart(t, r, opts, restart).map(|(res, _)| res))
        .collect::<Result<_, _>>()?;
    Ok(runs
        .into_iter()
        .min_by(|a, b| {
            a.rel_error
                .total_cmp(&b.rel_error)
                .then(a.restart_index.cmp(&b.restart_index))
        })
        .expect("at least one restart"))
}

/// Upper bound `min(mn, mN, nN)` on the rank of an `n × m × N` tensor.
pub fn rank_upper_bound(dims: (usize, usize, usize)) -> usize {
    let (n, m, nn) = dims;
    (m * n).min(m * nn).min(n * nn)
}

/// Outcome of [`estimate_rank`], including the error reached at each tried
/// rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEstimate {
    pub rank: usize,
    pub cpd: CpdResult,
    pub profile: Vec<(usize, f64)>,
}

/// Tries `r = 1, 2, …` up to [`rank_upper_bound`] and returns the first rank
/// whose best fit reaches `fit_tol`.
pub fn estimate_rank(
    t: &Tensor3,
    fit_tol: f64,
    opts: &CpdOptions,
) -> Result<RankEstimate, TensorError> {
    if !(fit_tol > 0.0 && fit_tol.is_finite()) {
        return Err(TensorError::InvalidOptions(format!(
            "fit_tol must be positive, got {fit_tol}"
        )));
    }
    let bound = rank_upper_bound(t.dims());
    let mut profile = Vec::new();
    for r in 1..=bound {
        let cpd = cpd_als(t, r, opts)?;
        profile.push((r, cpd.rel_error));
        if cpd.rel_error <= fit_tol {
            return Ok(RankEstimate {
                rank: r,
                cpd,
                profile,
            });
        }
    }
    Err(TensorError::RankNotFound {
        fit_tol,
        bound,
        profile,
    })
}

/// Correspondence between found and reference factors:
/// `V[:, i] ≈ alpha[i] · V̄[:, π(i)]`, `W[:, i] ≈ beta[i] · W̄[:, π(i)]` and
/// `H[:, i] ≈ gamma[i] · H̄[:, π(i)]` with `π = permutation`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatch {
    pub permutation: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Worst of all column angles (as sines) and of `|α β γ − 1|`.
    pub max_mismatch: f64,
}

/// Sine of the angle between two vectors, computed from the projection
/// residual so that small angles keep full relative accuracy.
fn column_sine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    let proj = linalg::dot(a, b) / (nb * nb);
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - proj * y).collect();
    (norm(&resid) / na).min(1.0)
}

/// Least-squares scale `s` with `found ≈ s · truth`.
fn column_scale(found: &[f64], truth: &[f64]) -> f64 {
    linalg::dot(truth, found) / linalg::dot(truth, truth)
}

/// Recovers the column permutation and scalings relating a CPD to reference
/// factors `(V̄, W̄, H̄)`.
pub fn match_factors(
    found: &CpdResult,
    truth: (&DenseMatrix, &DenseMatrix, &DenseMatrix),
) -> Result<FactorMatch, TensorError> {
    let (tv, tw, th) = truth;
    let r = found.rank;
    let shapes_ok = tv.cols() == r
        && tw.cols() == r
        && th.cols() == r
        && tv.rows() == found.v.rows()
        && tw.rows() == found.w.rows()
        && th.rows() == found.h.rows();
    if !shapes_ok {
        return Err(TensorError::Shape(
            "found and reference factors must have equal rank and dimensions".into(),
        ));
    }

    let found_cols = |m: &DenseMatrix| (0..r).map(|c| m.column(c)).collect::<Vec<_>>();
    let (fv, fw, fh) = (found_cols(&found.v), found_cols(&found.w), found_cols(&found.h));
    let (gv, gw, gh) = (found_cols(tv), found_cols(tw), found_cols(th));

    // cost[i][j]: worst angle when found column i is paired with truth column j
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..r)
                .map(|j| {
                    column_sine(&fv[i], &gv[j])
                        .max(column_sine(&fw[i], &gw[j]))
                        .max(column_sine(&fh[i], &gh[j]))
                })
                .collect()
        })
        .collect();

    let permutation = if r <= EXHAUSTIVE_MATCH_MAX_RANK {
        best_bottleneck_permutation(&cost)
    } else {
        hungarian(&cost)
    };
    let worst_angle = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .fold(0.0, f64::max);
    if worst_angle > MATCH_ANGLE_THRESHOLD {
        return Err(TensorError::NoMatch {
            worst_angle,
            threshold: MATCH_ANGLE_THRESHOLD,
        });
    }

    let mut alpha = Vec::with_capacity(r);
    let mut beta = Vec::with_capacity(r);
    let mut gamma = Vec::with_capacity(r);
    let mut max_mismatch = worst_angle;
    for (i, &j) in permutation.iter().enumerate() {
        let a = column_scale(&fv[i], &gv[j]);
        let b = column_scale(&fw[i], &gw[j]);
        let g = column_scale(&fh[i], &gh[j]);
        max_mismatch = max_mismatch.max((a * b * g - 1.0).abs());
        alpha.push(a);
        beta.push(b);
        gamma.push(g);
    }
    Ok(FactorMatch {
        permutation,
        alpha,
        beta,
        gamma,
        max_mismatch,
    })
}

/// Exhaustive search minimizing the largest cost, then the total cost.
fn best_bottleneck_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let r = cost.len();
    (0..r)
        .permutations(r)
        .map(|p| {
            let worst = p.iter().enumerate().map(|(i, &j)| cost[i][j]).fold(0.0, f64::max);
            let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            (worst, total, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, _, p)| p)
        .unwrap_or_default()
}

/// Minimum-total-cost assignment (Kuhn-Munkres with potentials).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
