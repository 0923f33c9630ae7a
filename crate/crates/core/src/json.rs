//! JSON file formats: polynomial systems, decoupled models and pipeline
//! reports. Every float is written with 17 significant digits so that
//! parsing an emitted file gives back the exact same values.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::decouple::{null_dimension, DecoupleReport};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::poly::{DecoupledModel, MultiPoly, PolyError, PolySystem, UniPoly};

#[derive(Debug, Error)]
pub enum JsonError {
    /// Syntax or schema error; the message carries line and column.
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid content: {0}")]
    Poly(#[from] PolyError),
    #[error("invalid matrix: {0}")]
    Matrix(#[from] LinalgError),
}

/// Pretty printer that renders floats as `{:.16e}`.
struct PrecisionFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for PrecisionFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let fmt = PrecisionFormatter {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value
        .serialize(&mut ser)
        .expect("serializing plain data into memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub exps: Vec<u32>,
    pub coef: f64,
}

/// `{"num_vars": m, "polys": [[{"exps": [...], "coef": c}, ...], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolySystemJson {
    pub num_vars: usize,
    pub polys: Vec<Vec<TermJson>>,
}

impl From<&PolySystem> for PolySystemJson {
    fn from(sys: &PolySystem) -> Self {
        Self {
            num_vars: sys.num_vars(),
            polys: sys
                .polys()
                .iter()
                .map(|p| {
                    p.terms()
                        .map(|(e, c)| TermJson {
                            exps: e.to_vec(),
                            coef: c,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<PolySystemJson> for PolySystem {
    type Error = JsonError;

    fn try_from(js: PolySystemJson) -> Result<Self, JsonError> {
        let polys = js
            .polys
            .into_iter()
            .map(|terms| MultiPoly::from_terms(js.num_vars, terms.into_iter().map(|t| (t.exps, t.coef))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolySystem::new(js.num_vars, polys)?)
    }
}

pub fn parse_system(text: &str) -> Result<PolySystem, JsonError> {
    let js: PolySystemJson = serde_json::from_str(text)?;
    js.try_into()
}

pub fn system_to_json(sys: &PolySystem) -> String {
    to_json_string(&PolySystemJson::from(sys))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// What produced the model, e.g. `"generate"` or `"decouple"`.
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `dim null W`; constants of the branches are not unique when positive.
    #[serde(default)]
    pub w_null_dimension: usize,
    #[serde(default)]
    pub w_rank_deficient: bool,
}

/// `{"V": [[...]], "W": [[...]], "g": [[c0, c1, ...], ...], "metadata": {...}}`
/// with row-major nested factor arrays and ascending branch coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

impl ModelJson {
    pub fn from_model(model: &DecoupledModel, metadata: ModelMetadata) -> Self {
        Self {
            v: model.v().to_rows(),
            w: model.w().to_rows(),
            g: model.g().iter().map(|g| g.coeffs().to_vec()).collect(),
            metadata,
        }
    }

    /// Metadata with the null dimension of `W` filled in.
    pub fn describe(model: &DecoupledModel, source: &str, seed: Option<u64>) -> Self {
        let null = null_dimension(model.w());
        Self::from_model(
            model,
            ModelMetadata {
                source: source.to_string(),
                seed,
                w_null_dimension: null,
                w_rank_deficient: null > 0,
            },
        )
    }

    pub fn to_model(&self) -> Result<DecoupledModel, JsonError> {
        let v = DenseMatrix::from_rows(&self.v)?;
        let w = DenseMatrix::from_rows(&self.w)?;
        let g = self
            .g
            .iter()
            .map(|c| UniPoly::new(c.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DecoupledModel::new(v, w, g)?)
    }
}

pub fn parse_model(text: &str) -> Result<DecoupledModel, JsonError> {
    let js: ModelJson = serde_json::from_str(text)?;
    js.to_model()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdJson {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub rank: usize,
    pub rel_error: f64,
    pub iterations: usize,
    pub restart_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrial {
    pub r: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputError {
    pub output: usize,
    pub error: f64,
    /// The reference polynomial was zero, so `error` is an absolute norm.
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsJson {
    pub r: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n_points: usize,
    pub degree: usize,
    pub dim_null_w: usize,
    pub kruskal_v: usize,
    pub kruskal_w: usize,
    pub kruskal_h: usize,
    pub kruskal_sum: usize,
    pub kruskal_threshold: usize,
    pub uniqueness_satisfied: bool,
    pub simplified_uniqueness_satisfied: bool,
    pub rank_profile: Vec<RankTrial>,
    pub cpd_rel_error: f64,
    pub coefficient_residual: f64,
    pub block_rank: usize,
    pub reconstruction_errors: Vec<OutputError>,
    pub max_reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub model: ModelJson,
    pub cpd: CpdJson,
    pub diagnostics: DiagnosticsJson,
    pub tensor_points: Vec<Vec<f64>>,
    pub coeff_points: Vec<Vec<f64>>,
}

impl ReportJson {
    pub fn from_report(report: &DecoupleReport, seed: Option<u64>) -> Self {
        let u = &report.uniqueness;
        let cpd = &report.cpd;
        Self {
            model: ModelJson::describe(&report.model, "decouple", seed),
            cpd: CpdJson {
                w: cpd.w.to_rows(),
                v: cpd.v.to_rows(),
                h: cpd.h.to_rows(),
                rank: cpd.rank,
                rel_error: cpd.rel_error,
                iterations: cpd.iterations,
                restart_index: cpd.restart_index,
            },
            diagnostics: DiagnosticsJson {
                r: report.chosen_r,
                k: report.chosen_k,
                n_points: report.tensor_points.len(),
                degree: report.degree,
                dim_null_w: report.coefficient_rank_deficiency,
                kruskal_v: u.kruskal_v,
                kruskal_w: u.kruskal_w,
                kruskal_h: u.kruskal_h,
                kruskal_sum: u.kruskal_sum,
                kruskal_threshold: u.threshold,
                uniqueness_satisfied: u.satisfied,
                simplified_uniqueness_satisfied: u.simplified_satisfied,
                rank_profile: report
                    .rank_profile
                    .iter()
                    .map(|&(r, e)| RankTrial { r, rel_error: e })
                    .collect(),
                cpd_rel_error: cpd.rel_error,
                coefficient_residual: report.coefficient_residual,
                block_rank: report.block_rank,
                reconstruction_errors: report
                    .reconstruction_errors
                    .iter()
                    .enumerate()
                    .map(|(i, c)| OutputError {
                        output: i,
                        error: c.error,
                        absolute: c.absolute,
                    })
                    .collect(),
                max_reconstruction_error: report.max_reconstruction_error(),
            },
            tensor_points: report.tensor_points.clone(),
            coeff_points: report.coeff_points.clone(),
        }
    }
}
