//! Command-line front end.
//!
//! Exit codes: `0` success, `1` failure (bad input, stage error),
//! `2` the computation finished but some per-output coefficient error is
//! above [`ACCEPT_TOL`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::decouple::{self, DecoupleReport, PointDistribution, SamplingConfig, DEFAULT_FIT_TOL, DEFAULT_TENSOR_POINTS};
use crate::json::{self, ModelJson, ReportJson};
use crate::poly::{coeff_distance, expand_model, CoeffDistance, PolySystem};
use crate::rng::{self, streams};
use crate::tensor::CpdOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INACCURATE: i32 = 2;

/// Largest per-output coefficient error accepted by `decouple` and `verify`.
pub const ACCEPT_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "polydecouple", version, about = "Decouple multivariate polynomial systems into univariate branches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Distribution {
    #[default]
    Uniform,
    Normal,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Master seed; every random stage derives its own stream from it.
    #[arg(long, default_value_t = rng::DEFAULT_SEED)]
    pub seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decouple a polynomial system read from a JSON file.
    Decouple {
        /// Polynomial system file (JSON).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of operating points N for the Jacobian tensor.
        #[arg(long, default_value_t = DEFAULT_TENSOR_POINTS)]
        points_n: usize,
        /// Number of coefficient-stage points K (0 = minimum required).
        #[arg(long, default_value_t = 0)]
        points_k: usize,
        /// CPD relative error accepted during the rank search.
        #[arg(long, default_value_t = DEFAULT_FIT_TOL)]
        fit_tol: f64,
        /// Random ALS restarts per tried rank.
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        /// Iteration budget per restart (ALS sweeps plus refinement steps).
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        /// Distribution of the random operating points.
        #[arg(long, value_enum, default_value_t = Distribution::Uniform)]
        distribution: Distribution,
        /// Also write the recovered model as a standalone model file.
        #[arg(long)]
        model_output: Option<PathBuf>,
    },
    /// Generate a random decoupled instance: a coupled system file plus its
    /// ground-truth model file.
    Generate {
        /// Number of inputs.
        #[arg(long)]
        m: usize,
        /// Number of outputs.
        #[arg(long)]
        n: usize,
        /// Number of branches.
        #[arg(long)]
        r: usize,
        /// Degree of every branch polynomial.
        #[arg(long)]
        d: usize,
        #[command(flatten)]
        common: CommonArgs,
        /// Ground-truth model file (defaults to `<output stem>.model.json`).
        #[arg(long)]
        model_output: Option<PathBuf>,
        /// Integer entries are drawn from [-range, range].
        #[arg(long, default_value_t = 3)]
        range: i64,
    },
    /// Compare a system file against the expansion of a model file.
    Verify {
        /// Polynomial system file (JSON).
        #[arg(long)]
        input: PathBuf,
        /// Decoupled model file (JSON) to compare against the system.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

struct CliError(String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_FAILURE,
            };
        }
    };
    let result = match cli.command {
        Command::Decouple {
            input,
            common,
            points_n,
            points_k,
            fit_tol,
            restarts,
            max_iters,
            distribution,
            model_output,
        } => {
            let sampling = SamplingConfig {
                num_points_tensor: points_n,
                num_points_coeff: points_k,
                distribution: match distribution {
                    Distribution::Uniform => PointDistribution::Uniform,
                    Distribution::Normal => PointDistribution::StandardNormal,
                },
                rng_seed: common.seed,
            };
            let cpd = CpdOptions {
                max_iters,
                num_restarts: restarts,
                rng_seed: rng::derive_seed(common.seed, streams::CPD),
                ..CpdOptions::default()
            };
            cmd_decouple(&input, &common, &sampling, &cpd, fit_tol, model_output.as_deref(), out, err)
        }
        Command::Generate {
            m,
            n,
            r,
            d,
            common,
            model_output,
            range,
        } => cmd_generate(&common, (m, n, r, d), range, model_output.as_deref(), out),
        Command::Verify {
            input,
            model,
            common,
        } => cmd_verify(&input, &model, &common, out),
    };
    match result {
        Ok(code) => code,
        Err(CliError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn read_file(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read {what} {}: {e}", path.display())))
}

fn check_output_path(path: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = path {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                return Err(CliError(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
    }
    Ok(())
}

fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(CliError::from),
    }
}

fn load_system(path: &Path) -> Result<PolySystem, CliError> {
    let text = read_file(path, "system file")?;
    json::parse_system(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_decouple(
    input: &Path,
    common: &CommonArgs,
    sampling: &SamplingConfig,
    cpd: &CpdOptions,
    fit_tol: f64,
    model_output: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    check_output_path(common.output.as_deref())?;
    check_output_path(model_output)?;
    let sys = load_system(input)?;
    let report = decouple::decouple_pipeline(&sys, sampling, cpd, fit_tol)?;
    let report_json = ReportJson::from_report(&report, Some(common.seed));
    let text = match common.format {
        ReportFormat::Json => json::to_json_string(&report_json),
        ReportFormat::Text => render_report(&report),
    };
    emit(common.output.as_deref(), &text, out)?;
    if let Some(p) = model_output {
        emit(Some(p), &json::to_json_string(&report_json.model), out)?;
    }
    let worst = report.max_reconstruction_error();
    if worst <= ACCEPT_TOL {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(
            err,
            "warning: largest coefficient error {worst:.3e} exceeds {ACCEPT_TOL:e}"
        );
        Ok(EXIT_INACCURATE)
    }
}

fn cmd_generate(
    common: &CommonArgs,
    (m, n, r, d): (usize, usize, usize, usize),
    range: i64,
    model_output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    if range <= 0 {
        return Err(CliError(format!("--range must be positive, got {range}")));
    }
    let model_path = match (model_output, common.output.as_deref()) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(sys_path)) => Some(sys_path.with_extension("model.json")),
        (None, None) => None,
    };
    check_output_path(common.output.as_deref())?;
    check_output_path(model_path.as_deref())?;
    let (sys, model) = decouple::generate_instance(m, n, r, d, (-range, range), common.seed)?;
    let model_json = ModelJson::describe(&model, "generate", Some(common.seed));
    match common.format {
        ReportFormat::Json => {
            emit(common.output.as_deref(), &json::system_to_json(&sys), out)?;
            match model_path {
                Some(p) => emit(Some(&p), &json::to_json_string(&model_json), out)?,
                None => emit(None, &json::to_json_string(&model_json), out)?,
            }
        }
        ReportFormat::Text => {
            let mut text = render_system(&sys);
            text.push_str(&render_model_summary(&model_json));
            emit(common.output.as_deref(), &text, out)?;
            if let Some(p) = model_path {
                emit(Some(&p), &json::to_json_string(&model_json), out)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_verify(
    input: &Path,
    model_path: &Path,
    common: &CommonArgs,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    check_output_path(common.output.as_deref())?;
    let sys = load_system(input)?;
    let model_text = read_file(model_path, "model file")?;
    let model = json::parse_model(&model_text)
        .map_err(|e| CliError(format!("{}: {e}", model_path.display())))?;
    if model.num_inputs() != sys.num_vars() || model.num_outputs() != sys.num_outputs() {
        return Err(CliError(format!(
            "model maps {} inputs to {} outputs but the system has {} variables and {} outputs",
            model.num_inputs(),
            model.num_outputs(),
            sys.num_vars(),
            sys.num_outputs()
        )));
    }
    let errors = coeff_distance(&expand_model(&model), &sys)?;
    let worst = errors.iter().map(|c| c.error).fold(0.0, f64::max);
    let ok = worst <= ACCEPT_TOL;
    let text = match common.format {
        ReportFormat::Json => {
            let body = serde_json::json!({
                "errors": errors.iter().enumerate().map(|(i, c)| json::OutputError {
                    output: i,
                    error: c.error,
                    absolute: c.absolute,
                }).collect::<Vec<_>>(),
                "max_error": worst,
                "tolerance": ACCEPT_TOL,
                "passed": ok,
            });
            json::to_json_string(&body)
        }
        ReportFormat::Text => render_errors(&errors, ok),
    };
    emit(common.output.as_deref(), &text, out)?;
    Ok(if ok { EXIT_OK } else { EXIT_INACCURATE })
}

fn render_errors(errors: &[CoeffDistance], ok: bool) -> String {
    let mut s = String::new();
    for (i, c) in errors.iter().enumerate() {
        let kind = if c.absolute { "absolute" } else { "relative" };
        let _ = writeln!(s, "f{}: {kind} coefficient error {:.4e}", i + 1, c.error);
    }
    let _ = writeln!(s, "{}", if ok { "PASS" } else { "FAIL" });
    s
}

fn render_term(exps: &[u32]) -> String {
    exps.iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(k, &e)| {
            if e == 1 {
                format!("u{}", k + 1)
            } else {
                format!("u{}^{e}", k + 1)
            }
        })
        .collect::<Vec<_>>()
        .join("*")
}

fn render_system(sys: &PolySystem) -> String {
    let mut s = String::new();
    for (i, p) in sys.polys().iter().enumerate() {
        let terms: Vec<String> = p
            .terms()
            .map(|(e, c)| {
                let mono = render_term(e);
                if mono.is_empty() {
                    format!("{c}")
                } else {
                    format!("{c}*{mono}")
                }
            })
            .collect();
        let body = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
        let _ = writeln!(s, "f{}(u) = {body}", i + 1);
    }
    s
}

fn render_model_summary(model: &ModelJson) -> String {
    format!(
        "branches: {}, dim null W: {}{}\n",
        model.g.len(),
        model.metadata.w_null_dimension,
        if model.metadata.w_rank_deficient {
            " (W column rank-deficient: branch constants are not unique)"
        } else {
            ""
        }
    )
}

/// Human-readable summary of a pipeline run.
pub fn render_report(report: &DecoupleReport) -> String {
    let mut s = String::new();
    let u = &report.uniqueness;
    let _ = writeln!(s, "rank r = {}  (CPD rel. error {:.3e})", report.chosen_r, report.cpd.rel_error);
    for (r, e) in &report.rank_profile {
        let _ = writeln!(s, "  tried r = {r}: {e:.3e}");
    }
    let _ = writeln!(
        s,
        "Kruskal: k_V + k_W + k_H = {} + {} + {} = {} (need {}) -> {}",
        u.kruskal_v,
        u.kruskal_w,
        u.kruskal_h,
        u.kruskal_sum,
        u.threshold,
        if u.satisfied { "unique" } else { "not guaranteed" }
    );
    let _ = writeln!(
        s,
        "K = {} points, R_K rank {}, dim null W = {}, residual {:.3e}",
        report.chosen_k, report.block_rank, report.coefficient_rank_deficiency, report.coefficient_residual
    );
    for (i, g) in report.model.g().iter().enumerate() {
        let var = format!("x{}", i + 1);
        let _ = writeln!(s, "g{}({var}) = {}", i + 1, g.display(&var));
    }
    s.push_str(&render_errors(
        &report.reconstruction_errors,
        report.max_reconstruction_error() <= ACCEPT_TOL,
    ));
    s
}
