//! Classical, sparse and compressed-sparse orientation models.
//!
//! All three variants regress the double-angle observations `cos 2theta` and
//! `sin 2theta` of a block field onto the Fourier design matrix, one half at
//! a time. They differ only in the solver and in whether the observations are
//! first compressed by a Gaussian sensing matrix.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, evaluate_sparse, BasisSpec};
use crate::coarse::{angle_from_double, double_angle, grid_points, OrientationField};
use crate::error::{Error, Result};
use crate::imgio::BlockMask;
use crate::par::{self, Execution};
use crate::sensing::{make_sensing_matrix, measure, required_measurements, LogBase, SensingMeta};
use crate::solvers::{solve_ls, solve_omp, OmpConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_SPARSITY: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Classical,
    Sparse,
    CompressedSparse,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Classical => "classical",
            Variant::Sparse => "sparse",
            Variant::CompressedSparse => "compressed-sparse",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Variant::Classical),
            "sparse" => Ok(Variant::Sparse),
            "cs" | "compressed-sparse" => Ok(Variant::CompressedSparse),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// One coefficient vector, stored densely or as support/values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Dense(Vec<f64>),
    Sparse { support: Vec<usize>, values: Vec<f64> },
}

impl Coefficients {
    pub fn nnz(&self) -> usize {
        match self {
            Coefficients::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            Coefficients::Sparse { values, .. } => values.iter().filter(|x| **x != 0.0).count(),
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        match self {
            Coefficients::Dense(v) => v.clone(),
            Coefficients::Sparse { support, values } => {
                let mut out = vec![0.0; d];
                for (&j, &v) in support.iter().zip(values) {
                    out[j] = v;
                }
                out
            }
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Coefficients::Sparse { .. })
    }

    pub fn evaluate(&self, spec: &BasisSpec, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        match self {
            Coefficients::Dense(v) => {
                let support: Vec<usize> = (0..v.len()).collect();
                if v.len() != spec.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} coefficients for a {}-term basis",
                        v.len(),
                        spec.dim()
                    )));
                }
                evaluate_sparse(spec, &support, v, points)
            }
            Coefficients::Sparse { support, values } => evaluate_sparse(spec, support, values, points),
        }
    }

    fn validate(&self, d: usize, budget: Option<usize>, half: &str) -> Result<()> {
        match self {
            Coefficients::Dense(v) => {
                if v.len() != d {
                    return Err(Error::Malformed(format!(
                        "{half}: dense vector has {} entries, expected {d}",
                        v.len()
                    )));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::Malformed(format!("{half}: non-finite coefficient")));
                }
            }
            Coefficients::Sparse { support, values } => {
                if support.len() != values.len() {
                    return Err(Error::Malformed(format!(
                        "{half}: support and values lengths differ"
                    )));
                }
                if let Some(s) = budget {
                    if support.len() > s {
                        return Err(Error::Malformed(format!(
                            "{half}: support size {} exceeds sparsity {s}",
                            support.len()
                        )));
                    }
                }
                if support.windows(2).any(|w| w[0] >= w[1]) || support.iter().any(|&j| j >= d) {
                    return Err(Error::Malformed(format!(
                        "{half}: support must be strictly increasing indices below {d}"
                    )));
                }
                if !values.iter().all(|x| x.is_finite()) {
                    return Err(Error::Malformed(format!("{half}: non-finite coefficient")));
                }
            }
        }
        Ok(())
    }
}

/// Where a model's observations came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_coherence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct OrientationModel {
    pub variant: Variant,
    pub spec: BasisSpec,
    /// Sparsity budget; present for the sparse variants only.
    pub sparsity: Option<usize>,
    pub beta_cos: Coefficients,
    pub beta_sin: Coefficients,
    /// Block size in pixels of the grid the model was fit on.
    pub w: f64,
    pub grid: (usize, usize),
    pub sensing: Option<SensingMeta>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    variant: Variant,
    basis: BasisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sparsity: Option<usize>,
    beta_cos: Coefficients,
    beta_sin: Coefficients,
    w: f64,
    grid: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensing: Option<SensingMeta>,
    #[serde(default)]
    provenance: Provenance,
}

impl From<OrientationModel> for ModelFile {
    fn from(m: OrientationModel) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            variant: m.variant,
            basis: m.spec,
            sparsity: m.sparsity,
            beta_cos: m.beta_cos,
            beta_sin: m.beta_sin,
            w: m.w,
            grid: [m.grid.0, m.grid.1],
            sensing: m.sensing,
            provenance: m.provenance,
        }
    }
}

impl TryFrom<ModelFile> for OrientationModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: f.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let model = OrientationModel {
            variant: f.variant,
            spec: f.basis,
            sparsity: f.sparsity,
            beta_cos: f.beta_cos,
            beta_sin: f.beta_sin,
            w: f.w,
            grid: (f.grid[0], f.grid[1]),
            sensing: f.sensing,
            provenance: f.provenance,
        };
        model.validate()?;
        Ok(model)
    }
}

impl OrientationModel {
    pub fn validate(&self) -> Result<()> {
        let d = self.spec.dim();
        if self.grid.0 == 0 || self.grid.1 == 0 || self.w.is_nan() || self.w <= 0.0 {
            return Err(Error::Malformed("empty grid or block size".into()));
        }
        match self.variant {
            Variant::Classical => {
                if self.beta_cos.is_sparse() || self.beta_sin.is_sparse() {
                    return Err(Error::Malformed("classical model must store dense halves".into()));
                }
                if self.sensing.is_some() {
                    return Err(Error::Malformed("classical model has sensing metadata".into()));
                }
            }
            Variant::Sparse | Variant::CompressedSparse => {
                if !(self.beta_cos.is_sparse() && self.beta_sin.is_sparse()) {
                    return Err(Error::Malformed(format!(
                        "{} model must store support/values halves",
                        self.variant
                    )));
                }
                let Some(s) = self.sparsity else {
                    return Err(Error::Malformed("sparse model without sparsity budget".into()));
                };
                if s == 0 || s > d {
                    return Err(Error::Malformed(format!("sparsity {s} outside [1, {d}]")));
                }
                let cs = self.variant == Variant::CompressedSparse;
                if cs != self.sensing.is_some() {
                    return Err(Error::Malformed(
                        "sensing metadata must be present exactly for compressed-sparse models"
                            .into(),
                    ));
                }
            }
        }
        self.beta_cos.validate(d, self.sparsity, "beta_cos")?;
        self.beta_sin.validate(d, self.sparsity, "beta_sin")?;
        Ok(())
    }

    pub fn nnz(&self) -> (usize, usize) {
        (self.beta_cos.nnz(), self.beta_sin.nnz())
    }

    /// Double-angle expansions `(c, s)` at normalized points.
    pub fn evaluate(&self, points: &[[f64; 2]]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.beta_cos.evaluate(&self.spec, points)?,
            self.beta_sin.evaluate(&self.spec, points)?,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: SCHEMA_VERSION,
                })
            }
            None => return Err(Error::Malformed("missing schema_version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn save_model(model: &OrientationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<OrientationModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    OrientationModel::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: Variant,
    pub n_samples: usize,
    /// `||b_cos - Phi beta_cos||` over the fit samples.
    pub residual_cos: f64,
    pub residual_sin: f64,
    /// Angular RMSE in degrees against the input field at the fit samples.
    pub angular_rmse_deg: f64,
    pub nnz_cos: usize,
    pub nnz_sin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<usize>,
}

/// Parameters shared by the three fits. Defaults are `k = 5`, `S = 20`,
/// `C = 10`, natural log, seed 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub spec: BasisSpec,
    pub sparsity: usize,
    pub tol: f64,
    pub c: f64,
    pub log_base: LogBase,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            spec: BasisSpec::with_order(DEFAULT_ORDER),
            sparsity: DEFAULT_SPARSITY,
            tol: DEFAULT_TOL,
            c: crate::sensing::DEFAULT_C,
            log_base: LogBase::Natural,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

pub fn fit(
    field: &OrientationField,
    variant: Variant,
    config: &FitConfig,
) -> Result<(OrientationModel, FitReport)> {
    match variant {
        Variant::Classical => fit_classical(field, &config.spec, config.execution),
        Variant::Sparse => fit_sparse(field, config),
        Variant::CompressedSparse => fit_cs(field, config),
    }
}

/// Fits many fields with one configuration, parallel over fields. Each
/// result is identical to a standalone [`fit`] of that field.
pub fn fit_batch(
    fields: &[OrientationField],
    variant: Variant,
    config: &FitConfig,
) -> Vec<Result<(OrientationModel, FitReport)>> {
    par::map_slice(config.execution, fields, |f| fit(f, variant, config))
}

/// Least-squares fit of both halves.
pub fn fit_classical(
    field: &OrientationField,
    spec: &BasisSpec,
    exec: Execution,
) -> Result<(OrientationModel, FitReport)> {
    let obs = double_angle(field)?;
    let phi = build_basis(&obs.points, spec)?.into_matrix();
    if obs.len() < spec.dim() {
        log::warn!(
            "{} samples for {} basis functions; returning the minimum-norm fit",
            obs.len(),
            spec.dim()
        );
    }
    let (c, s) = solve_pair(exec, &obs.cos, &obs.sin, |b| {
        solve_ls(&phi, b).map(|x| Coefficients::Dense(x.beta))
    });
    finish(field, Variant::Classical, spec, None, c?, s?, None, &obs)
}

/// OMP fit of both halves with at most `config.sparsity` atoms each.
pub fn fit_sparse(
    field: &OrientationField,
    config: &FitConfig,
) -> Result<(OrientationModel, FitReport)> {
    let spec = &config.spec;
    check_sparsity(config.sparsity, spec)?;
    let obs = double_angle(field)?;
    let phi = build_basis(&obs.points, spec)?.into_matrix();
    let omp = OmpConfig {
        sparsity: config.sparsity.min(obs.len()),
        tol: config.tol,
    };
    let (c, s) = solve_pair(config.execution, &obs.cos, &obs.sin, |b| sparse_half(&phi, b, &omp));
    finish(
        field,
        Variant::Sparse,
        spec,
        Some(config.sparsity),
        c?,
        s?,
        None,
        &obs,
    )
}

/// Compresses both observation vectors with one Gaussian sensing matrix, then
/// runs OMP on `(Psi Phi, Psi b)`.
pub fn fit_cs(field: &OrientationField, config: &FitConfig) -> Result<(OrientationModel, FitReport)> {
    let spec = &config.spec;
    check_sparsity(config.sparsity, spec)?;
    let obs = double_angle(field)?;
    let n = obs.len();
    let m = required_measurements(config.sparsity, n, config.c, config.log_base)?;
    let psi = make_sensing_matrix(m, n, config.seed)?;
    let phi = build_basis(&obs.points, spec)?.into_matrix();
    let sensed: DMatrix<f64> = psi.matrix() * &phi;
    let g_cos = measure(&psi, &obs.cos)?;
    let g_sin = measure(&psi, &obs.sin)?;
    let omp = OmpConfig {
        sparsity: config.sparsity.min(m),
        tol: config.tol,
    };
    let (c, s) = solve_pair(config.execution, &g_cos, &g_sin, |g| sparse_half(&sensed, g, &omp));
    finish(
        field,
        Variant::CompressedSparse,
        spec,
        Some(config.sparsity),
        c?,
        s?,
        Some(psi.meta(config.log_base)),
        &obs,
    )
}

fn check_sparsity(s: usize, spec: &BasisSpec) -> Result<()> {
    if s == 0 || s > spec.dim() {
        return Err(Error::InvalidParameter(format!(
            "sparsity {s} outside [1, {}]",
            spec.dim()
        )));
    }
    Ok(())
}

fn sparse_half(a: &DMatrix<f64>, b: &[f64], omp: &OmpConfig) -> Result<Coefficients> {
    let sol = solve_omp(a, b, omp)?;
    Ok(Coefficients::Sparse {
        support: sol.support,
        values: sol.values,
    })
}

/// Solves the cos and sin halves independently with the same solver.
fn solve_pair<F, T>(exec: Execution, b_cos: &[f64], b_sin: &[f64], solve: F) -> (T, T)
where
    F: Fn(&[f64]) -> T + Sync,
    T: Send,
{
    par::join(exec, || solve(b_cos), || solve(b_sin))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    field: &OrientationField,
    variant: Variant,
    spec: &BasisSpec,
    sparsity: Option<usize>,
    beta_cos: Coefficients,
    beta_sin: Coefficients,
    sensing: Option<SensingMeta>,
    obs: &crate::coarse::DoubleAngle,
) -> Result<(OrientationModel, FitReport)> {
    let model = OrientationModel {
        variant,
        spec: *spec,
        sparsity,
        beta_cos,
        beta_sin,
        w: field.block_size(),
        grid: (field.cols(), field.rows()),
        sensing,
        provenance: Provenance::default(),
    };
    let (c, s) = model.evaluate(&obs.points)?;
    let norm = |pred: &[f64], b: &[f64]| -> f64 {
        pred.iter()
            .zip(b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let sq_err: f64 = obs
        .blocks
        .iter()
        .enumerate()
        .map(|(i, &blk)| angle_diff(angle_from_double(c[i], s[i]), field.theta()[blk]).powi(2))
        .sum();
    let (nnz_cos, nnz_sin) = model.nnz();
    let report = FitReport {
        variant,
        n_samples: obs.len(),
        residual_cos: norm(&c, &obs.cos),
        residual_sin: norm(&s, &obs.sin),
        angular_rmse_deg: (sq_err / obs.len() as f64).sqrt().to_degrees(),
        nnz_cos,
        nnz_sin,
        measurements: model.sensing.as_ref().map(|m| m.m),
    };
    Ok((model, report))
}

/// Smallest rotation between two undirected angles, in radians.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(PI);
    d.min(PI - d)
}

/// Evaluates the model at the block centers of a `cols x rows` grid covering
/// the same image area as the fit grid. Every requested block is valid
/// (outside the optional mask, blocks are skipped); coherence carries
/// `min(1, sqrt(c^2 + s^2))`.
pub fn reconstruct(
    model: &OrientationModel,
    grid: (usize, usize),
    mask: Option<&BlockMask>,
) -> Result<OrientationField> {
    let (cols, rows) = grid;
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidParameter("empty reconstruction grid".into()));
    }
    if let Some(m) = mask {
        if (m.cols(), m.rows()) != grid {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, grid is {cols}x{rows}",
                m.cols(),
                m.rows()
            )));
        }
    }
    let points = grid_points(cols, rows);
    let (c, s) = model.evaluate(&points)?;
    let theta: Vec<f64> = c.iter().zip(&s).map(|(c, s)| angle_from_double(*c, *s)).collect();
    let coherence: Vec<f64> = c.iter().zip(&s).map(|(c, s)| c.hypot(*s).min(1.0)).collect();
    let valid = match mask {
        Some(m) => m.valid().to_vec(),
        None => vec![true; cols * rows],
    };
    let w = model.w * model.grid.0 as f64 / cols as f64;
    OrientationField::new(cols, rows, w, theta, valid, coherence)
}

/// RMSE in degrees of the undirected angle difference over blocks valid in both fields.
pub fn angular_error(a: &OrientationField, b: &OrientationField) -> Result<f64> {
    angular_error_where(a, b, |_| true)
}

/// [`angular_error`] restricted to block indices accepted by `keep`.
pub fn angular_error_where(
    a: &OrientationField,
    b: &OrientationField,
    keep: impl Fn(usize) -> bool,
) -> Result<f64> {
    if (a.cols(), a.rows()) != (b.cols(), b.rows()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.cols(),
            a.rows(),
            b.cols(),
            b.rows()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if a.valid()[i] && b.valid()[i] && keep(i) {
            sum += angle_diff(a.theta()[i], b.theta()[i]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidBlocks);
    }
    Ok((sum / count as f64).sqrt().to_degrees())
}
