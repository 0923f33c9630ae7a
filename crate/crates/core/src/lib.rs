//! Decoupling of multivariate polynomial systems.
//!
//! Given `f: ℝᵐ → ℝⁿ` with polynomial components, find
//! `f(u) = W·g(Vᵀu)`: `r` univariate polynomials `g_i` applied to linear
//! forms `v_iᵀu` and mixed linearly by `W`.
//!
//! The Jacobian of such a structure factors as `J(u) = W·diag(g_i′(v_iᵀu))·Vᵀ`,
//! so Jacobians sampled at `N` points and stacked into an `n × m × N` tensor
//! have a rank-`r` CP decomposition whose factors are `W`, `V` and the matrix
//! of branch derivatives. [`tensor`] computes that decomposition, and
//! [`decouple`] recovers the `g_i` coefficients from a block-Vandermonde
//! least-squares system and checks the result against the input by
//! re-expanding it with [`poly::expand_model`].

pub mod cli;
pub mod decouple;
pub mod json;
pub mod linalg;
pub mod poly;
pub mod rng;
pub mod tensor;

pub use decouple::{
    decouple_pipeline, generate_instance, DecoupleError, DecoupleReport, PointDistribution,
    SamplingConfig,
};
pub use linalg::DenseMatrix;
pub use poly::{expand_model, DecoupledModel, MultiPoly, PolySystem, UniPoly};
pub use tensor::{cpd_als, CpdOptions, CpdResult, Tensor3};
