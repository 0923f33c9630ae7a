//! Sparse multivariate polynomials, univariate branch polynomials and the
//! decoupled model `f(u) = W·g(Vᵀu)`.
//!
//! Variable and output indices are zero-based throughout.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use thiserror::Error;

use crate::linalg::{norm, DenseMatrix};

/// Relative threshold used by [`UniPoly::degree`].
pub const NEGLIGIBLE_COEFF_REL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("length mismatch: {context} (expected {expected}, got {got})")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variable index {index} out of range for {num_vars} variables")]
    VariableOutOfRange { index: usize, num_vars: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("a polynomial system needs at least one variable and one output")]
    Empty,
    #[error("inconsistent model: {0}")]
    InvalidModel(String),
}

/// One term `coefficient · ∏ u_k^exponents[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Sparse polynomial in `num_vars` variables, keyed by exponent vector.
/// Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly {
    num_vars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl MultiPoly {
    pub fn zero(num_vars: usize) -> Self {
        Self {
            num_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(num_vars: usize, value: f64) -> Self {
        let mut p = Self::zero(num_vars);
        p.add_term_unchecked(vec![0; num_vars], value);
        p
    }

    /// The polynomial `u_k`.
    pub fn variable(num_vars: usize, k: usize) -> Result<Self, PolyError> {
        if k >= num_vars {
            return Err(PolyError::VariableOutOfRange { index: k, num_vars });
        }
        let mut exps = vec![0; num_vars];
        exps[k] = 1;
        let mut p = Self::zero(num_vars);
        p.add_term_unchecked(exps, 1.0);
        Ok(p)
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, merging
    /// repeated exponent vectors and dropping terms that cancel to zero.
    pub fn from_terms<I>(num_vars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(num_vars);
        for (exps, coef) in terms {
            p.add_term(exps, coef)?;
        }
        Ok(p)
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coefficient: f64) -> Result<(), PolyError> {
        if exponents.len() != self.num_vars {
            return Err(PolyError::LengthMismatch {
                context: "monomial exponent vector",
                expected: self.num_vars,
                got: exponents.len(),
            });
        }
        if !coefficient.is_finite() {
            return Err(PolyError::NonFinite("monomial coefficient"));
        }
        self.add_term_unchecked(exponents, coefficient);
        Ok(())
    }

    fn add_term_unchecked(&mut self, exponents: Vec<u32>, coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        let entry = self.terms.entry(exponents);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coefficient);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let merged = *o.get() + coefficient;
                if merged == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = merged;
                }
            }
        }
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the given exponent vector (zero when absent).
    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms.get(exponents).copied().unwrap_or(0.0)
    }

    /// Iterates `(exponents, coefficient)` in lexicographic exponent order.
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        self.terms
            .iter()
            .map(|(e, &c)| Monomial {
                exponents: e.clone(),
                coefficient: c,
            })
            .collect()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64, PolyError> {
        self.check_point(u)?;
        Ok(self
            .terms
            .iter()
            .map(|(exps, &c)| {
                exps.iter()
                    .zip(u)
                    .fold(c, |acc, (&e, &x)| if e == 0 { acc } else { acc * x.powi(e as i32) })
            })
            .sum())
    }

    fn check_point(&self, u: &[f64]) -> Result<(), PolyError> {
        if u.len() != self.num_vars {
            return Err(PolyError::LengthMismatch {
                context: "evaluation point",
                expected: self.num_vars,
                got: u.len(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(PolyError::NonFinite("evaluation point"));
        }
        Ok(())
    }

    /// Exact partial derivative with respect to `u_k`.
    pub fn partial_derivative(&self, k: usize) -> Result<Self, PolyError> {
        if k >= self.num_vars {
            return Err(PolyError::VariableOutOfRange {
                index: k,
                num_vars: self.num_vars,
            });
        }
        let mut out = Self::zero(self.num_vars);
        for (exps, &c) in &self.terms {
            let e = exps[k];
            if e == 0 {
                continue;
            }
            let mut de = exps.clone();
            de[k] = e - 1;
            out.add_term_unchecked(de, c * f64::from(e));
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = Self::zero(self.num_vars);
        for (e, &c) in &self.terms {
            out.add_term_unchecked(e.clone(), c * factor);
        }
        out
    }

    /// Coefficient vector norm, optionally skipping the constant term.
    pub fn coeff_norm(&self, include_constant: bool) -> f64 {
        let coeffs: Vec<f64> = self
            .terms
            .iter()
            .filter(|(e, _)| include_constant || e.iter().any(|&x| x > 0))
            .map(|(_, &c)| c)
            .collect();
        norm(&coeffs)
    }
}

impl Add for &MultiPoly {
    type Output = MultiPoly;

    fn add(self, rhs: &MultiPoly) -> MultiPoly {
        assert_eq!(self.num_vars, rhs.num_vars, "adding polynomials in different variable counts");
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term_unchecked(e.clone(), c);
        }
        out
    }
}

impl Mul<f64> for &MultiPoly {
    type Output = MultiPoly;

    fn mul(self, rhs: f64) -> MultiPoly {
        self.scale(rhs)
    }
}

/// `n` polynomials in the same `m` variables: `f: ℝᵐ → ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    num_vars: usize,
    polys: Vec<MultiPoly>,
}

impl PolySystem {
    pub fn new(num_vars: usize, polys: Vec<MultiPoly>) -> Result<Self, PolyError> {
        if num_vars == 0 || polys.is_empty() {
            return Err(PolyError::Empty);
        }
        for p in &polys {
            if p.num_vars != num_vars {
                return Err(PolyError::LengthMismatch {
                    context: "member polynomial variable count",
                    expected: num_vars,
                    got: p.num_vars,
                });
            }
        }
        Ok(Self { num_vars, polys })
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    #[inline]
    pub fn num_outputs(&self) -> usize {
        self.polys.len()
    }

    pub fn polys(&self) -> &[MultiPoly] {
        &self.polys
    }

    pub fn total_degree(&self) -> u32 {
        self.polys.iter().map(MultiPoly::total_degree).max().unwrap_or(0)
    }

    /// True when every polynomial is constant, i.e. the Jacobian vanishes.
    pub fn is_constant(&self) -> bool {
        self.polys
            .iter()
            .all(|p| p.terms().all(|(e, _)| e.iter().all(|&x| x == 0)))
    }

    pub fn eval(&self, u: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.polys.iter().map(|p| p.eval(u)).collect()
    }

    /// Symbolic Jacobian, reusable across many evaluation points.
    pub fn jacobian(&self) -> SymbolicJacobian {
        let entries = self
            .polys
            .iter()
            .map(|p| {
                (0..self.num_vars)
                    .map(|k| p.partial_derivative(k).expect("index in range"))
                    .collect()
            })
            .collect();
        SymbolicJacobian {
            num_vars: self.num_vars,
            entries,
        }
    }

    /// `n × m` Jacobian at `u`, entry `(i, j) = ∂f_i/∂u_j (u)`.
    pub fn jacobian_at(&self, u: &[f64]) -> Result<DenseMatrix, PolyError> {
        self.jacobian().at(u)
    }

    /// Linear combination `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self, PolyError> {
        if self.num_vars != other.num_vars || self.num_outputs() != other.num_outputs() {
            return Err(PolyError::LengthMismatch {
                context: "system shape",
                expected: self.num_outputs(),
                got: other.num_outputs(),
            });
        }
        let polys = self
            .polys
            .iter()
            .zip(&other.polys)
            .map(|(p, q)| &(p * a) + &(q * b))
            .collect();
        Self::new(self.num_vars, polys)
    }
}

/// Table of partial derivatives `∂f_i/∂u_j`.
#[derive(Debug, Clone)]
pub struct SymbolicJacobian {
    num_vars: usize,
    entries: Vec<Vec<MultiPoly>>,
}

impl SymbolicJacobian {
    pub fn entry(&self, output: usize, var: usize) -> &MultiPoly {
        &self.entries[output][var]
    }

    pub fn at(&self, u: &[f64]) -> Result<DenseMatrix, PolyError> {
        if u.len() != self.num_vars {
            return Err(PolyError::LengthMismatch {
                context: "evaluation point",
                expected: self.num_vars,
                got: u.len(),
            });
        }
        let mut out = DenseMatrix::zeros(self.entries.len(), self.num_vars);
        for (i, row) in self.entries.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                out[(i, j)] = p.eval(u)?;
            }
        }
        Ok(out)
    }
}

/// Dense univariate polynomial; `coeffs[j]` multiplies `x^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniPoly {
    coeffs: Vec<f64>,
}

impl UniPoly {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, PolyError> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PolyError::NonFinite("univariate coefficient"));
        }
        let coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs };
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `coeffs.len() - 1`, regardless of trailing negligible entries.
    pub fn stored_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Highest index whose coefficient exceeds `1e-12 · max|c|`.
    pub fn degree(&self) -> usize {
        let largest = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if largest == 0.0 {
            return 0;
        }
        self.coeffs
            .iter()
            .rposition(|c| c.abs() > NEGLIGIBLE_COEFF_REL * largest)
            .unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self { coeffs: vec![0.0] };
        }
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &c)| c * j as f64)
                .collect(),
        }
    }

    /// Text rendering with negligible terms dropped, e.g. `2x^2 - 3x + 1`.
    pub fn display(&self, var: &str) -> String {
        let largest = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let mut parts = Vec::new();
        for (j, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 || c.abs() <= NEGLIGIBLE_COEFF_REL * largest {
                continue;
            }
            let mono = match j {
                0 => String::new(),
                1 => var.to_string(),
                _ => format!("{var}^{j}"),
            };
            let sign = if c < 0.0 { "-" } else { "+" };
            parts.push((sign, format!("{:.6}{}", c.abs(), mono)));
        }
        if parts.is_empty() {
            return "0".into();
        }
        let mut s = String::new();
        for (i, (sign, body)) in parts.iter().enumerate() {
            if i == 0 {
                if *sign == "-" {
                    s.push('-');
                }
            } else {
                s.push_str(&format!(" {sign} "));
            }
            s.push_str(body);
        }
        s
    }
}

/// `f(u) = W·g(Vᵀu)` with `V: m×r`, `W: n×r` and `r` univariate branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledModel {
    v: DenseMatrix,
    w: DenseMatrix,
    g: Vec<UniPoly>,
}

impl DecoupledModel {
    pub fn new(v: DenseMatrix, w: DenseMatrix, g: Vec<UniPoly>) -> Result<Self, PolyError> {
        if v.cols() != g.len() || w.cols() != g.len() {
            return Err(PolyError::InvalidModel(format!(
                "V has {} columns, W has {} columns, but there are {} branch polynomials",
                v.cols(),
                w.cols(),
                g.len()
            )));
        }
        Ok(Self { v, w, g })
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn w(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn g(&self) -> &[UniPoly] {
        &self.g
    }

    pub fn num_inputs(&self) -> usize {
        self.v.rows()
    }

    pub fn num_outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn num_branches(&self) -> usize {
        self.g.len()
    }

    /// `x = Vᵀu`.
    pub fn internal_inputs(&self, u: &[f64]) -> Result<Vec<f64>, PolyError> {
        if u.len() != self.num_inputs() {
            return Err(PolyError::LengthMismatch {
                context: "evaluation point",
                expected: self.num_inputs(),
                got: u.len(),
            });
        }
        Ok(self.v.tr_matvec(u).expect("length checked"))
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>, PolyError> {
        let x = self.internal_inputs(u)?;
        let gx: Vec<f64> = self.g.iter().zip(&x).map(|(g, &xi)| g.eval(xi)).collect();
        Ok(self.w.matvec(&gx).expect("shape checked at construction"))
    }

    /// Factored Jacobian `W·diag(g_i′(v_iᵀu))·Vᵀ`.
    pub fn jacobian_at(&self, u: &[f64]) -> Result<DenseMatrix, PolyError> {
        let x = self.internal_inputs(u)?;
        let slopes: Vec<f64> = self
            .g
            .iter()
            .zip(&x)
            .map(|(g, &xi)| g.derivative().eval(xi))
            .collect();
        let mut scaled_w = self.w.clone();
        for (i, &s) in slopes.iter().enumerate() {
            scaled_w.scale_column(i, s);
        }
        Ok(scaled_w
            .matmul(&self.v.transpose())
            .expect("shape checked at construction"))
    }

    /// `N × r` matrix with entries `g_i′(v_iᵀu⁽ᵏ⁾)`: the third CP factor of
    /// the Jacobian tensor sampled at `points`.
    pub fn derivative_factor(&self, points: &[Vec<f64>]) -> Result<DenseMatrix, PolyError> {
        let derivs: Vec<UniPoly> = self.g.iter().map(UniPoly::derivative).collect();
        let mut h = DenseMatrix::zeros(points.len().max(1), self.num_branches());
        for (k, u) in points.iter().enumerate() {
            let x = self.internal_inputs(u)?;
            for (i, d) in derivs.iter().enumerate() {
                h[(k, i)] = d.eval(x[i]);
            }
        }
        Ok(h)
    }

    pub fn max_degree(&self) -> usize {
        self.g.iter().map(UniPoly::stored_degree).max().unwrap_or(0)
    }
}

/// Expands `W·g(Vᵀu)` into coupled coefficient form.
///
/// Each power `(v_iᵀu)^δ` is expanded with the multinomial theorem and the
/// terms are accumulated into sparse per-output maps. This is the reference
/// against which decoupled results are checked.
pub fn expand_model(model: &DecoupledModel) -> PolySystem {
    let m = model.num_inputs();
    let n = model.num_outputs();
    let mut acc: Vec<BTreeMap<Vec<u32>, f64>> = vec![BTreeMap::new(); n];

    for (i, g) in model.g.iter().enumerate() {
        let v = model.v.column(i);
        for (delta, &c) in g.coeffs().iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for exps in compositions(delta as u32, m) {
                let mut term = c * multinomial(delta as u32, &exps);
                for (&e, &vk) in exps.iter().zip(&v) {
                    if e > 0 {
                        term *= vk.powi(e as i32);
                    }
                }
                if term == 0.0 {
                    continue;
                }
                for (out, map) in acc.iter_mut().enumerate() {
                    let w = model.w[(out, i)];
                    if w != 0.0 {
                        *map.entry(exps.clone()).or_insert(0.0) += w * term;
                    }
                }
            }
        }
    }

    let polys = acc
        .into_iter()
        .map(|map| MultiPoly::from_terms(m, map).expect("finite model produces finite terms"))
        .collect();
    PolySystem::new(m, polys).expect("model shape is non-empty")
}

/// All exponent vectors of length `parts` summing to `total`.
fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    fn rec(remaining: u32, slot: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slot + 1 == cur.len() {
            cur[slot] = remaining;
            out.push(cur.clone());
            return;
        }
        for e in (0..=remaining).rev() {
            cur[slot] = e;
            rec(remaining - e, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; parts];
    rec(total, 0, &mut cur, &mut out);
    out
}

/// `total! / ∏ exps_k!`, computed exactly in integers.
fn multinomial(total: u32, exps: &[u32]) -> f64 {
    let mut result: u128 = 1;
    let mut placed: u32 = 0;
    for &e in exps {
        for j in 1..=e {
            placed += 1;
            // result * placed / j stays integral: binomial build-up
            result = result * u128::from(placed) / u128::from(j);
        }
    }
    debug_assert_eq!(placed, total);
    result as f64
}

/// Relative coefficient error of one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffDistance {
    /// `‖c − c̄‖/‖c̄‖`, or the absolute norm when `absolute` is set.
    pub error: f64,
    /// Set when the reference polynomial has zero norm.
    pub absolute: bool,
}

/// Per-output `‖c_i − c̄_i‖/‖c̄_i‖` over the union of both supports, with `b`
/// as the reference `c̄`.
pub fn coeff_distance(a: &PolySystem, b: &PolySystem) -> Result<Vec<CoeffDistance>, PolyError> {
    coeff_distance_with(a, b, true)
}

/// [`coeff_distance`] with the option to leave the constant terms out.
pub fn coeff_distance_with(
    a: &PolySystem,
    b: &PolySystem,
    include_constant: bool,
) -> Result<Vec<CoeffDistance>, PolyError> {
    if a.num_vars != b.num_vars {
        return Err(PolyError::LengthMismatch {
            context: "system variable count",
            expected: b.num_vars,
            got: a.num_vars,
        });
    }
    if a.num_outputs() != b.num_outputs() {
        return Err(PolyError::LengthMismatch {
            context: "system output count",
            expected: b.num_outputs(),
            got: a.num_outputs(),
        });
    }
    Ok(a
        .polys
        .iter()
        .zip(&b.polys)
        .map(|(p, reference)| {
            let diff = &(p * 1.0) + &(reference * -1.0);
            let num = diff.coeff_norm(include_constant);
            let den = reference.coeff_norm(include_constant);
            if den == 0.0 {
                CoeffDistance {
                    error: num,
                    absolute: true,
                }
            } else {
                CoeffDistance {
                    error: num / den,
                    absolute: false,
                }
            }
        })
        .collect())
}
