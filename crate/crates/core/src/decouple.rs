//! End-to-end decoupling: sample operating points, stack Jacobians into a
//! tensor, CP-decompose it, recover the branch polynomials from a
//! block-Vandermonde system and verify the result in coefficient space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{self, norm, DenseMatrix, LinalgError, DEFAULT_RANK_TOL};
use crate::poly::{
    coeff_distance, expand_model, CoeffDistance, DecoupledModel, PolyError, PolySystem, UniPoly,
};
use crate::rng::{self, streams};
use crate::tensor::{self, CpdOptions, CpdResult, Tensor3, TensorError};

/// Relative residual `‖R_K c − y_K‖/‖y_K‖` above which the coefficient solve
/// is rejected.
pub const MAX_COEFF_RESIDUAL: f64 = 1e-8;

/// Default acceptance threshold for the CPD fit during rank search.
pub const DEFAULT_FIT_TOL: f64 = 1e-10;

/// Redraw budget of [`generate_instance`].
pub const GENERATOR_MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Error)]
pub enum DecoupleError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("the system is constant in every variable; its Jacobian tensor is zero")]
    ConstantSystem,
    #[error("{got} coefficient-stage points given but at least K = {required} are needed")]
    InsufficientPoints { required: usize, got: usize },
    #[error(
        "coefficient system residual {residual:e} exceeds {threshold:e} \
         (wrong rank, poor factors, or the input has no exact decoupling)"
    )]
    Residual { residual: f64, threshold: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no instance satisfying the uniqueness condition after {attempts} draws")]
    GeneratorExhausted { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointDistribution {
    /// Uniform on `[-1, 1]ᵐ`.
    #[default]
    Uniform,
    StandardNormal,
}

/// Default number of Jacobian-tensor points `N`.
pub const DEFAULT_TENSOR_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// `N`, points for the Jacobian tensor.
    pub num_points_tensor: usize,
    /// `K`, points for the coefficient stage; 0 picks the minimum.
    pub num_points_coeff: usize,
    pub distribution: PointDistribution,
    pub rng_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_points_tensor: DEFAULT_TENSOR_POINTS,
            num_points_coeff: 0,
            distribution: PointDistribution::Uniform,
            rng_seed: rng::DEFAULT_SEED,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DecoupleError> {
        if self.num_points_tensor == 0 {
            return Err(DecoupleError::InvalidConfig(
                "the tensor stage needs at least one point".into(),
            ));
        }
        Ok(())
    }
}

pub fn sample_points<R: Rng>(
    num_vars: usize,
    count: usize,
    distribution: PointDistribution,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..num_vars)
                .map(|_| match distribution {
                    PointDistribution::Uniform => rng.random_range(-1.0..=1.0),
                    PointDistribution::StandardNormal => StandardNormal.sample(rng),
                })
                .collect()
        })
        .collect()
}

/// Stacks `J(u⁽ᵏ⁾)` as frontal slices of an `n × m × N` tensor.
pub fn jacobian_tensor_at(sys: &PolySystem, points: &[Vec<f64>]) -> Result<Tensor3, DecoupleError> {
    let jac = sys.jacobian();
    let slices = points
        .iter()
        .map(|u| jac.at(u))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor3::from_slices(&slices)?)
}

/// Samples `N` operating points from the tensor stream of `cfg.rng_seed` and
/// builds the Jacobian tensor there. The points are returned alongside.
pub fn build_jacobian_tensor(
    sys: &PolySystem,
    cfg: &SamplingConfig,
) -> Result<(Tensor3, Vec<Vec<f64>>), DecoupleError> {
    cfg.validate()?;
    let mut rng = rng::stream_rng(cfg.rng_seed, streams::TENSOR_POINTS);
    let points = sample_points(sys.num_vars(), cfg.num_points_tensor, cfg.distribution, &mut rng);
    let t = jacobian_tensor_at(sys, &points)?;
    Ok((t, points))
}

/// Kruskal-based uniqueness diagnostic for a set of CP factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniquenessCheck {
    pub kruskal_v: usize,
    pub kruskal_w: usize,
    pub kruskal_h: usize,
    pub kruskal_sum: usize,
    /// `2r + 2`.
    pub threshold: usize,
    /// `k_V + k_W + k_H ≥ 2r + 2`.
    pub satisfied: bool,
    /// `min(m, r) + min(n, r) ≥ r + 2`, valid when `V`, `W` and `H` are of
    /// full Kruskal rank and `N ≥ r`.
    pub simplified_satisfied: bool,
    /// Set when a factor had too many columns for exhaustive Kruskal rank and
    /// its plain numerical rank was used as an upper bound.
    pub bound_only: bool,
}

/// Sufficient (not necessary) condition for essential uniqueness. A failed
/// check is a diagnostic, never an error.
pub fn check_uniqueness(
    v: &DenseMatrix,
    w: &DenseMatrix,
    h: &DenseMatrix,
    r: usize,
) -> UniquenessCheck {
    let mut bound_only = false;
    let mut k = |a: &DenseMatrix| match linalg::kruskal_rank(a, DEFAULT_RANK_TOL) {
        Ok(k) => k,
        Err(_) => {
            bound_only = true;
            linalg::numerical_rank(a, DEFAULT_RANK_TOL)
        }
    };
    let (kv, kw, kh) = (k(v), k(w), k(h));
    let kruskal_sum = kv + kw + kh;
    let threshold = 2 * r + 2;
    let (m, n) = (v.rows(), w.rows());
    UniquenessCheck {
        kruskal_v: kv,
        kruskal_w: kw,
        kruskal_h: kh,
        kruskal_sum,
        threshold,
        satisfied: kruskal_sum >= threshold,
        simplified_satisfied: m.min(r) + n.min(r) >= r + 2,
        bound_only,
    }
}

/// `⌈(r(d+1) − dim null W) / rank W⌉` with `rank W = min(n, r − dim null W)`.
///
/// Each point contributes at most `rank W` independent equations; for a `W`
/// of full row rank this is the usual count of `n` per point.
pub fn min_points_k(r: usize, d: usize, n: usize, dim_null_w: usize) -> usize {
    assert!(n >= 1, "need at least one output");
    let rows_per_point = n.min(r.saturating_sub(dim_null_w)).max(1);
    (r * (d + 1)).saturating_sub(dim_null_w).div_ceil(rows_per_point)
}

/// `r − rank W` at the default tolerance.
pub fn null_dimension(w: &DenseMatrix) -> usize {
    w.cols() - linalg::numerical_rank(w, DEFAULT_RANK_TOL)
}

/// The stacked system `y_K = R_K c` with `R_K = blockdiag(W, …, W) · X_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    /// `(K·n) × (r·(d+1))`.
    pub r_k: DenseMatrix,
    /// `(K·r) × (r·(d+1))`; row `k·r + i` holds `[1, x_i, …, x_i^d]` in
    /// columns `i·(d+1) ..= i·(d+1) + d`.
    pub x_k: DenseMatrix,
    /// Stacked outputs, length `K·n`.
    pub y_k: Vec<f64>,
    pub num_branches: usize,
    pub degree: usize,
}

/// Builds the block-Vandermonde system from factors, points and the original
/// outputs at those points.
pub fn build_block_system(
    w: &DenseMatrix,
    v: &DenseMatrix,
    d: usize,
    points: &[Vec<f64>],
    outputs: &[Vec<f64>],
) -> Result<BlockSystem, DecoupleError> {
    let r = w.cols();
    let n = w.rows();
    if v.cols() != r {
        return Err(DecoupleError::InvalidConfig(format!(
            "V has {} columns but W has {r}",
            v.cols()
        )));
    }
    if points.len() != outputs.len() {
        return Err(DecoupleError::InvalidConfig(format!(
            "{} points but {} output vectors",
            points.len(),
            outputs.len()
        )));
    }
    let required = min_points_k(r, d, n, null_dimension(w));
    let k_points = points.len();
    if k_points < required || k_points == 0 {
        return Err(DecoupleError::InsufficientPoints {
            required: required.max(1),
            got: k_points,
        });
    }

    let width = r * (d + 1);
    let mut x_k = DenseMatrix::zeros(k_points * r, width);
    let mut y_k = Vec::with_capacity(k_points * n);
    for (k, (u, y)) in points.iter().zip(outputs).enumerate() {
        if u.len() != v.rows() {
            return Err(PolyError::LengthMismatch {
                context: "coefficient-stage point",
                expected: v.rows(),
                got: u.len(),
            }
            .into());
        }
        if y.len() != n {
            return Err(PolyError::LengthMismatch {
                context: "coefficient-stage output",
                expected: n,
                got: y.len(),
            }
            .into());
        }
        let x = v.tr_matvec(u)?;
        for (i, &xi) in x.iter().enumerate() {
            let mut p = 1.0;
            for j in 0..=d {
                x_k[(k * r + i, i * (d + 1) + j)] = p;
                p *= xi;
            }
        }
        y_k.extend_from_slice(y);
    }

    let mut r_k = DenseMatrix::zeros(k_points * n, width);
    for k in 0..k_points {
        for o in 0..n {
            for i in 0..r {
                let wi = w[(o, i)];
                if wi == 0.0 {
                    continue;
                }
                for c in 0..width {
                    r_k[(k * n + o, c)] += wi * x_k[(k * r + i, c)];
                }
            }
        }
    }
    Ok(BlockSystem {
        r_k,
        x_k,
        y_k,
        num_branches: r,
        degree: d,
    })
}

/// Branch polynomials recovered from a [`BlockSystem`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSolution {
    pub g: Vec<UniPoly>,
    /// `‖R_K c − y_K‖ / ‖y_K‖` (absolute when `y_K = 0`).
    pub relative_residual: f64,
    pub numerical_rank: usize,
}

/// Minimum-norm least-squares solve of `y_K = R_K c`, sliced into `r`
/// polynomials of degree `d`. When `W` is column-rank-deficient the constant
/// terms are the minimum-norm member of their affine solution set.
pub fn solve_coefficients(
    bs: &BlockSystem,
    r: usize,
    d: usize,
) -> Result<CoefficientSolution, DecoupleError> {
    if bs.r_k.cols() != r * (d + 1) {
        return Err(DecoupleError::InvalidConfig(format!(
            "block system has {} columns, expected r(d+1) = {}",
            bs.r_k.cols(),
            r * (d + 1)
        )));
    }
    let sol = linalg::lstsq_min_norm(&bs.r_k, &bs.y_k, DEFAULT_RANK_TOL)?;
    let ynorm = norm(&bs.y_k);
    let relative_residual = if ynorm == 0.0 {
        sol.residual_norm
    } else {
        sol.residual_norm / ynorm
    };
    if relative_residual > MAX_COEFF_RESIDUAL {
        return Err(DecoupleError::Residual {
            residual: relative_residual,
            threshold: MAX_COEFF_RESIDUAL,
        });
    }
    let g = sol
        .solution
        .chunks(d + 1)
        .map(|c| UniPoly::new(c.to_vec()))
        .collect::<Result<_, _>>()?;
    Ok(CoefficientSolution {
        g,
        relative_residual,
        numerical_rank: sol.numerical_rank,
    })
}

/// Largest per-branch deviation from `c̄_{π(i),δ} = β_i α_i^δ c_{i,δ}`,
/// measured as `‖c̄ − β α^δ c‖ / ‖c̄‖` over the compared degrees of each
/// branch. `δ = 0` is only compared when `include_constant` is set, which is
/// only meaningful when `W` has full column rank.
pub fn relate_representations(
    g: &[UniPoly],
    g_true: &[UniPoly],
    alpha: &[f64],
    beta: &[f64],
    permutation: &[usize],
    include_constant: bool,
) -> f64 {
    assert_eq!(g.len(), g_true.len(), "branch counts differ");
    assert!(alpha.len() == g.len() && beta.len() == g.len() && permutation.len() == g.len());
    let start = usize::from(!include_constant);
    let mut worst: f64 = 0.0;
    for (i, gi) in g.iter().enumerate() {
        let truth = &g_true[permutation[i]];
        let len = gi.coeffs().len().max(truth.coeffs().len());
        let coef = |p: &UniPoly, j: usize| p.coeffs().get(j).copied().unwrap_or(0.0);
        let mut diff = Vec::with_capacity(len);
        let mut reference = Vec::with_capacity(len);
        for delta in start..len {
            let predicted = beta[i] * alpha[i].powi(delta as i32) * coef(gi, delta);
            reference.push(coef(truth, delta));
            diff.push(coef(truth, delta) - predicted);
        }
        let den = norm(&reference);
        let dev = if den == 0.0 { norm(&diff) } else { norm(&diff) / den };
        worst = worst.max(dev);
    }
    worst
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupleReport {
    pub model: DecoupledModel,
    pub cpd: CpdResult,
    pub chosen_r: usize,
    pub chosen_k: usize,
    pub degree: usize,
    /// `dim null W`: number of branch constants that are not identifiable.
    pub coefficient_rank_deficiency: usize,
    /// Per output, from expanding the model and comparing coefficients with
    /// the input system.
    pub reconstruction_errors: Vec<CoeffDistance>,
    pub uniqueness: UniquenessCheck,
    /// Best relative CPD error for every rank tried.
    pub rank_profile: Vec<(usize, f64)>,
    pub coefficient_residual: f64,
    pub block_rank: usize,
    pub tensor_points: Vec<Vec<f64>>,
    pub coeff_points: Vec<Vec<f64>>,
}

impl DecoupleReport {
    pub fn max_reconstruction_error(&self) -> f64 {
        self.reconstruction_errors
            .iter()
            .map(|c| c.error)
            .fold(0.0, f64::max)
    }
}

/// Full pipeline with sampled points.
pub fn decouple_pipeline(
    sys: &PolySystem,
    cfg: &SamplingConfig,
    cpd_opts: &CpdOptions,
    fit_tol: f64,
) -> Result<DecoupleReport, DecoupleError> {
    cfg.validate()?;
    if sys.is_constant() {
        return Err(DecoupleError::ConstantSystem);
    }
    let (_, tensor_points) = build_jacobian_tensor(sys, cfg)?;
    decouple_with_points(sys, &tensor_points, None, cfg, cpd_opts, fit_tol)
}

/// Pipeline on caller-supplied tensor-stage points. Coefficient-stage points
/// are taken from `coeff_points` when given, otherwise `K` fresh points are
/// sampled per `cfg` (`K` = minimum when `cfg.num_points_coeff` is 0).
pub fn decouple_with_points(
    sys: &PolySystem,
    tensor_points: &[Vec<f64>],
    coeff_points: Option<&[Vec<f64>]>,
    cfg: &SamplingConfig,
    cpd_opts: &CpdOptions,
    fit_tol: f64,
) -> Result<DecoupleReport, DecoupleError> {
    if sys.is_constant() {
        return Err(DecoupleError::ConstantSystem);
    }
    if tensor_points.is_empty() {
        return Err(DecoupleError::InvalidConfig(
            "the tensor stage needs at least one point".into(),
        ));
    }
    let t = jacobian_tensor_at(sys, tensor_points)?;
    let estimate = tensor::estimate_rank(&t, fit_tol, cpd_opts)?;
    let r = estimate.rank;
    let mut cpd = estimate.cpd;
    // unit V columns keep the Vandermonde powers bounded
    cpd.normalize();

    let d = sys.total_degree() as usize;
    let n = sys.num_outputs();
    let dim_null_w = null_dimension(&cpd.w);
    let k_min = min_points_k(r, d, n, dim_null_w);

    let coeff_points: Vec<Vec<f64>> = match coeff_points {
        Some(p) => p.to_vec(),
        None => {
            let k = if cfg.num_points_coeff == 0 {
                k_min
            } else {
                cfg.num_points_coeff
            };
            let mut rng = rng::stream_rng(cfg.rng_seed, streams::COEFF_POINTS);
            sample_points(sys.num_vars(), k, cfg.distribution, &mut rng)
        }
    };
    let outputs = coeff_points
        .iter()
        .map(|u| sys.eval(u))
        .collect::<Result<Vec<_>, _>>()?;
    let bs = build_block_system(&cpd.w, &cpd.v, d, &coeff_points, &outputs)?;
    let sol = solve_coefficients(&bs, r, d)?;

    let model = DecoupledModel::new(cpd.v.clone(), cpd.w.clone(), sol.g)?;
    let reconstruction_errors = coeff_distance(&expand_model(&model), sys)?;
    let uniqueness = check_uniqueness(&cpd.v, &cpd.w, &cpd.h, r);

    Ok(DecoupleReport {
        model,
        chosen_r: r,
        chosen_k: coeff_points.len(),
        degree: d,
        coefficient_rank_deficiency: dim_null_w,
        reconstruction_errors,
        uniqueness,
        rank_profile: estimate.profile,
        coefficient_residual: sol.relative_residual,
        block_rank: sol.numerical_rank,
        tensor_points: tensor_points.to_vec(),
        coeff_points,
        cpd,
    })
}

fn random_int_matrix<R: Rng>(rows: usize, cols: usize, range: (i64, i64), rng: &mut R) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    for c in 0..cols {
        loop {
            for i in 0..rows {
                m[(i, c)] = rng.random_range(range.0..=range.1) as f64;
            }
            if (0..rows).any(|i| m[(i, c)] != 0.0) {
                break;
            }
        }
    }
    m
}

fn random_branch<R: Rng>(d: usize, range: (i64, i64), rng: &mut R) -> UniPoly {
    let mut coeffs: Vec<f64> = (0..=d)
        .map(|_| rng.random_range(range.0..=range.1) as f64)
        .collect();
    while coeffs[d] == 0.0 {
        coeffs[d] = rng.random_range(range.0..=range.1) as f64;
    }
    UniPoly::new(coeffs).expect("integer coefficients are finite")
}

/// Draws a random decoupled model with integer `V̄`, `W̄` and branch
/// coefficients in `coeff_range` (every branch of exact degree `d`) and
/// returns its expansion together with the model.
///
/// For `r ≥ 2` factors are redrawn until the Kruskal condition holds at
/// `2r + 2` random probe points. `r = 1` is accepted as drawn.
pub fn generate_instance(
    m: usize,
    n: usize,
    r: usize,
    d: usize,
    coeff_range: (i64, i64),
    rng_seed: u64,
) -> Result<(PolySystem, DecoupledModel), DecoupleError> {
    if m == 0 || n == 0 || r == 0 || d == 0 {
        return Err(DecoupleError::InvalidConfig(format!(
            "m, n, r and d must be positive (got {m}, {n}, {r}, {d})"
        )));
    }
    let (lo, hi) = coeff_range;
    if lo > hi || (lo == 0 && hi == 0) {
        return Err(DecoupleError::InvalidConfig(format!(
            "coefficient range [{lo}, {hi}] must contain a non-zero integer"
        )));
    }
    let mut rng = rng::stream_rng(rng_seed, streams::GENERATOR);
    for _ in 0..GENERATOR_MAX_ATTEMPTS {
        let v = random_int_matrix(m, r, coeff_range, &mut rng);
        let w = random_int_matrix(n, r, coeff_range, &mut rng);
        let g: Vec<UniPoly> = (0..r).map(|_| random_branch(d, coeff_range, &mut rng)).collect();
        let model = DecoupledModel::new(v, w, g)?;
        if r >= 2 {
            let probes = sample_points(m, 2 * r + 2, PointDistribution::Uniform, &mut rng);
            let h = model.derivative_factor(&probes)?;
            if !check_uniqueness(model.v(), model.w(), &h, r).satisfied {
                continue;
            }
        }
        return Ok((expand_model(&model), model));
    }
    Err(DecoupleError::GeneratorExhausted {
        attempts: GENERATOR_MAX_ATTEMPTS,
    })
}
