//! C ABI for `polydecouple`.
//!
//! Objects cross the boundary as opaque heap handles (`PdSystem`, `PdModel`,
//! `PdReport`) that the caller releases with the matching `*_free` function.
//! Every fallible call returns a [`PdStatus`]; on failure a human-readable
//! message is available from [`pd_last_error_message`] on the same thread.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`pd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use polydecouple::decouple::{self, DecoupleError, PointDistribution, SamplingConfig};
use polydecouple::json::{self, JsonError, ModelJson, ReportJson};
use polydecouple::poly::{self, PolyError};
use polydecouple::tensor::{CpdOptions, TensorError};
use polydecouple::{rng, DecoupleReport, DecoupledModel, PolySystem};

/// Result codes of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument is out of range or a string is not valid UTF-8.
    InvalidArgument = 2,
    /// JSON input did not parse or did not match the schema.
    ParseError = 3,
    /// Buffer lengths or model/system shapes do not agree.
    DimensionMismatch = 4,
    /// The system is constant, so its Jacobian tensor is zero.
    ConstantSystem = 5,
    /// No CP rank up to the bound reached the fit tolerance.
    RankNotFound = 6,
    /// Fewer coefficient-stage points than the minimum were requested.
    InsufficientPoints = 7,
    /// The coefficient system could not be solved exactly.
    Residual = 8,
    /// Another numerical failure.
    Numerical = 9,
    /// The instance generator could not satisfy the uniqueness condition.
    GeneratorExhausted = 10,
    /// A Rust panic was caught at the boundary.
    Panic = 99,
}

/// Opaque polynomial system.
pub struct PdSystem(PolySystem);

/// Opaque decoupled model `W g(Vᵀ u)`.
pub struct PdModel(DecoupledModel);

/// Opaque pipeline report.
pub struct PdReport {
    report: DecoupleReport,
    seed: u64,
}

/// Pipeline configuration. Obtain defaults from [`pd_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdOptions {
    /// Number of Jacobian-tensor points `N`.
    pub num_points_tensor: usize,
    /// Number of coefficient-stage points `K`; 0 selects the minimum.
    pub num_points_coeff: usize,
    /// Master seed for every random stage.
    pub seed: u64,
    /// Random CPD restarts per tried rank.
    pub num_restarts: usize,
    /// Iteration budget per CPD restart.
    pub max_iters: usize,
    /// Relative CPD error accepted during the rank search.
    pub fit_tol: f64,
    /// Non-zero draws points from a standard normal instead of U(-1, 1).
    pub normal_points: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).expect("NUL bytes removed"));
}

struct Failure(PdStatus, String);

impl Failure {
    fn new(status: PdStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<DecoupleError> for Failure {
    fn from(e: DecoupleError) -> Self {
        let status = match &e {
            DecoupleError::ConstantSystem => PdStatus::ConstantSystem,
            DecoupleError::InsufficientPoints { .. } => PdStatus::InsufficientPoints,
            DecoupleError::Residual { .. } => PdStatus::Residual,
            DecoupleError::InvalidConfig(_) => PdStatus::InvalidArgument,
            DecoupleError::GeneratorExhausted { .. } => PdStatus::GeneratorExhausted,
            DecoupleError::Tensor(TensorError::RankNotFound { .. }) => PdStatus::RankNotFound,
            DecoupleError::Tensor(TensorError::ZeroTensor) => PdStatus::ConstantSystem,
            DecoupleError::Tensor(TensorError::InvalidOptions(_)) => PdStatus::InvalidArgument,
            DecoupleError::Poly(PolyError::LengthMismatch { .. }) => PdStatus::DimensionMismatch,
            _ => PdStatus::Numerical,
        };
        Self(status, e.to_string())
    }
}

impl From<JsonError> for Failure {
    fn from(e: JsonError) -> Self {
        Self(PdStatus::ParseError, e.to_string())
    }
}

impl From<PolyError> for Failure {
    fn from(e: PolyError) -> Self {
        let status = match e {
            PolyError::LengthMismatch { .. } => PdStatus::DimensionMismatch,
            PolyError::NonFinite(_) => PdStatus::InvalidArgument,
            _ => PdStatus::Numerical,
        };
        Self(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error
/// message.
fn guard<F>(f: F) -> PdStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {msg}"));
            PdStatus::Panic
        }
    }
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(PdStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    null_check(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PdStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

/// # Safety
/// `p` must be NULL or valid for reads of `len` doubles.
unsafe fn read_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    null_check(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or valid for writes of `len` doubles.
unsafe fn write_slice(p: *mut f64, len: usize, values: &[f64], name: &str) -> Result<(), Failure> {
    if len != values.len() {
        return Err(Failure::new(
            PdStatus::DimensionMismatch,
            format!("{name} has length {len}, expected {}", values.len()),
        ));
    }
    if len == 0 {
        return Ok(());
    }
    null_check(p, name)?;
    std::slice::from_raw_parts_mut(p, len).copy_from_slice(values);
    Ok(())
}

/// # Safety
/// `out` must be NULL or valid for a pointer write.
unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    null_check(out, "out")?;
    let s = CString::new(text).map_err(|_| Failure::new(PdStatus::Numerical, "string contains NUL"))?;
    *out = s.into_raw();
    Ok(())
}

/// # Safety
/// `out` must be NULL or valid for a pointer write.
unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    null_check(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failure on this thread, or an empty string
/// after a successful call. Valid until the next call into this library on
/// the same thread; do not free.
#[no_mangle]
pub extern "C" fn pd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default pipeline configuration.
#[no_mangle]
pub extern "C" fn pd_options_default() -> PdOptions {
    let sampling = SamplingConfig::default();
    let cpd = CpdOptions::default();
    PdOptions {
        num_points_tensor: sampling.num_points_tensor,
        num_points_coeff: sampling.num_points_coeff,
        seed: sampling.rng_seed,
        num_restarts: cpd.num_restarts,
        max_iters: cpd.max_iters,
        fit_tol: decouple::DEFAULT_FIT_TOL,
        normal_points: false,
    }
}

/// Parses a polynomial system from its JSON form
/// `{"num_vars": m, "polys": [[{"exps": [...], "coef": c}, ...], ...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_system_from_json(json: *const c_char, out: *mut *mut PdSystem) -> PdStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let sys = json::parse_system(text)?;
        write_handle(out, PdSystem(sys))
    })
}

/// Serializes a system to JSON. Free the result with [`pd_string_free`].
///
/// # Safety
/// `sys` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_system_to_json(sys: *const PdSystem, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        null_check(sys, "sys")?;
        write_string(out, json::system_to_json(&(*sys).0))
    })
}

/// Releases a system. NULL is ignored.
///
/// # Safety
/// `sys` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_system_free(sys: *mut PdSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of input variables `m`, or 0 for NULL.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_system_num_vars(sys: *const PdSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.num_vars())
}

/// Number of outputs `n`, or 0 for NULL.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_system_num_outputs(sys: *const PdSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.num_outputs())
}

/// Evaluates the system at `u` (length `m`) into `out` (length `n`).
///
/// # Safety
/// `sys` must be a live handle and the buffers valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn pd_system_eval(
    sys: *const PdSystem,
    u: *const f64,
    u_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PdStatus {
    guard(|| {
        null_check(sys, "sys")?;
        let y = (*sys).0.eval(read_slice(u, u_len, "u")?)?;
        write_slice(out, out_len, &y, "out")
    })
}

/// Jacobian at `u` (length `m`) written row-major into `out` (length `n·m`).
///
/// # Safety
/// `sys` must be a live handle and the buffers valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn pd_system_jacobian(
    sys: *const PdSystem,
    u: *const f64,
    u_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PdStatus {
    guard(|| {
        null_check(sys, "sys")?;
        let jac = (*sys).0.jacobian_at(read_slice(u, u_len, "u")?)?;
        write_slice(out, out_len, jac.as_slice(), "out")
    })
}

/// Per-output relative coefficient distance `‖c − c̄‖/‖c̄‖` of `sys`
/// against `reference`, written into `out` (length `n`).
///
/// # Safety
/// Both handles must be live and `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pd_coeff_distance(
    sys: *const PdSystem,
    reference: *const PdSystem,
    out: *mut f64,
    out_len: usize,
) -> PdStatus {
    guard(|| {
        null_check(sys, "sys")?;
        null_check(reference, "reference")?;
        let d: Vec<f64> = poly::coeff_distance(&(*sys).0, &(*reference).0)?
            .iter()
            .map(|c| c.error)
            .collect();
        write_slice(out, out_len, &d, "out")
    })
}

/// Runs the full decoupling pipeline. `options` may be NULL for defaults.
///
/// # Safety
/// `sys` must be a live handle, `options` NULL or valid, `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn pd_decouple(
    sys: *const PdSystem,
    options: *const PdOptions,
    out: *mut *mut PdReport,
) -> PdStatus {
    guard(|| {
        null_check(sys, "sys")?;
        null_check(out, "out")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| pd_options_default());
        let sampling = SamplingConfig {
            num_points_tensor: opts.num_points_tensor,
            num_points_coeff: opts.num_points_coeff,
            distribution: if opts.normal_points {
                PointDistribution::StandardNormal
            } else {
                PointDistribution::Uniform
            },
            rng_seed: opts.seed,
        };
        let cpd = CpdOptions {
            max_iters: opts.max_iters,
            num_restarts: opts.num_restarts,
            rng_seed: rng::derive_seed(opts.seed, rng::streams::CPD),
            ..CpdOptions::default()
        };
        let report = decouple::decouple_pipeline(&(*sys).0, &sampling, &cpd, opts.fit_tol)?;
        write_handle(out, PdReport { report, seed: opts.seed })
    })
}

/// Releases a report. NULL is ignored.
///
/// # Safety
/// `report` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_report_free(report: *mut PdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of branches `r` found, or 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_report_rank(report: *const PdReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.chosen_r)
}

/// Number of coefficient-stage points `K` used, or 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_report_num_coeff_points(report: *const PdReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.chosen_k)
}

/// `dim null W` of the recovered model, or 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_report_null_dimension(report: *const PdReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.coefficient_rank_deficiency)
}

/// Largest per-output relative coefficient error, or NaN for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_report_max_error(report: *const PdReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.max_reconstruction_error())
}

/// Relative error of the accepted CP decomposition, or NaN for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_report_cpd_error(report: *const PdReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.cpd.rel_error)
}

/// Full report as JSON (same schema as the command-line tool).
///
/// # Safety
/// `report` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_report_to_json(report: *const PdReport, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        null_check(report, "report")?;
        let r = &*report;
        write_string(out, json::to_json_string(&ReportJson::from_report(&r.report, Some(r.seed))))
    })
}

/// Copies the recovered model into a new handle.
///
/// # Safety
/// `report` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_report_model(report: *const PdReport, out: *mut *mut PdModel) -> PdStatus {
    guard(|| {
        null_check(report, "report")?;
        write_handle(out, PdModel((*report).report.model.clone()))
    })
}

/// Parses a model from `{"V": [[...]], "W": [[...]], "g": [[c0, c1, ...]]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_model_from_json(json: *const c_char, out: *mut *mut PdModel) -> PdStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let model = json::parse_model(text)?;
        write_handle(out, PdModel(model))
    })
}

/// Serializes a model to JSON. Free the result with [`pd_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_model_to_json(model: *const PdModel, out: *mut *mut c_char) -> PdStatus {
    guard(|| {
        null_check(model, "model")?;
        let js = ModelJson::describe(&(*model).0, "ffi", None);
        write_string(out, json::to_json_string(&js))
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_model_free(model: *mut PdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of branches, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_model_num_branches(model: *const PdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_branches())
}

/// Evaluates `W g(Vᵀ u)` at `u` (length `m`) into `out` (length `n`).
///
/// # Safety
/// `model` must be a live handle and the buffers valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn pd_model_eval(
    model: *const PdModel,
    u: *const f64,
    u_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PdStatus {
    guard(|| {
        null_check(model, "model")?;
        let y = (*model).0.evaluate(read_slice(u, u_len, "u")?)?;
        write_slice(out, out_len, &y, "out")
    })
}

/// Expands a model into the equivalent coupled polynomial system.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_model_expand(model: *const PdModel, out: *mut *mut PdSystem) -> PdStatus {
    guard(|| {
        null_check(model, "model")?;
        write_handle(out, PdSystem(poly::expand_model(&(*model).0)))
    })
}

/// Draws a random decoupled instance with integer entries in
/// `[-range, range]`, returning the coupled system and its ground truth.
/// Either out-pointer may be NULL if that object is not wanted.
///
/// # Safety
/// Non-NULL out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pd_generate_instance(
    m: usize,
    n: usize,
    r: usize,
    d: usize,
    range: i64,
    seed: u64,
    sys_out: *mut *mut PdSystem,
    model_out: *mut *mut PdModel,
) -> PdStatus {
    guard(|| {
        if range <= 0 {
            return Err(Failure::new(PdStatus::InvalidArgument, format!("range must be positive, got {range}")));
        }
        let (sys, model) = decouple::generate_instance(m, n, r, d, (-range, range), seed)?;
        if !sys_out.is_null() {
            write_handle(sys_out, PdSystem(sys))?;
        }
        if !model_out.is_null() {
            write_handle(model_out, PdModel(model))?;
        }
        Ok(())
    })
}
