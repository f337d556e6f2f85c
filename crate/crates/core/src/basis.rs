//! Order-k two-dimensional real Fourier basis.
//!
//! Each basis function is a product `u_i(x) * v_j(y)` of one-dimensional
//! factors `[1, cos(wx), sin(wx), cos(2wx), sin(2wx), ..., cos(kwx), sin(kwx)]`.
//! Column index is `i * (2k + 1) + j` ("u-major"), fixed so coefficient
//! supports are comparable across fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column ordering tag written into model files.
pub const ORDERING_U_MAJOR: &str = "u-major";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpecRepr", into = "BasisSpecRepr")]
pub struct BasisSpec {
    pub k: usize,
    pub omega_x: f64,
    pub omega_y: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self::with_order(5)
    }
}

impl BasisSpec {
    /// Order `k` with one full period over the unit domain on both axes.
    pub fn with_order(k: usize) -> Self {
        Self {
            k,
            omega_x: 2.0 * PI,
            omega_y: 2.0 * PI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w > 0.0;
        if !ok(self.omega_x) || !ok(self.omega_y) {
            return Err(Error::InvalidParameter(format!(
                "fundamental frequencies must be positive, got ({}, {})",
                self.omega_x, self.omega_y
            )));
        }
        Ok(())
    }

    /// Length of each 1-D factor, `2k + 1`.
    pub fn factor_len(&self) -> usize {
        2 * self.k + 1
    }

    /// Number of basis functions, `(2k + 1)^2`.
    pub fn dim(&self) -> usize {
        self.factor_len() * self.factor_len()
    }
}

#[derive(Serialize, Deserialize)]
struct BasisSpecRepr {
    k: usize,
    omega_x: f64,
    omega_y: f64,
    ordering: String,
}

impl From<BasisSpec> for BasisSpecRepr {
    fn from(s: BasisSpec) -> Self {
        Self {
            k: s.k,
            omega_x: s.omega_x,
            omega_y: s.omega_y,
            ordering: ORDERING_U_MAJOR.to_string(),
        }
    }
}

impl TryFrom<BasisSpecRepr> for BasisSpec {
    type Error = Error;

    fn try_from(r: BasisSpecRepr) -> Result<Self> {
        if r.ordering != ORDERING_U_MAJOR {
            return Err(Error::Malformed(format!("unknown basis ordering {:?}", r.ordering)));
        }
        let spec = BasisSpec {
            k: r.k,
            omega_x: r.omega_x,
            omega_y: r.omega_y,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Fills `out` (length `2k + 1`) with the 1-D factor at `t`.
fn factor(k: usize, omega: f64, t: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for j in 1..=k {
        let (s, c) = (j as f64 * omega * t).sin_cos();
        out[2 * j - 1] = c;
        out[2 * j] = s;
    }
}

/// Basis row at one point, written into `row` (length `dim`).
pub fn basis_row(spec: &BasisSpec, point: [f64; 2], row: &mut [f64]) {
    let m = spec.factor_len();
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; m];
    factor(spec.k, spec.omega_x, point[0], &mut u);
    factor(spec.k, spec.omega_y, point[1], &mut v);
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            row[i * m + j] = ui * vj;
        }
    }
}

fn check_points(points: &[[f64; 2]]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty point list".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
    {
        return Err(Error::InvalidParameter(format!(
            "point ({}, {}) outside the unit square",
            p[0], p[1]
        )));
    }
    Ok(())
}

/// Design matrix evaluated at a set of sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    spec: BasisSpec,
    points: Vec<[f64; 2]>,
    entries: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }
}

pub fn build_basis(points: &[[f64; 2]], spec: &BasisSpec) -> Result<BasisMatrix> {
    spec.validate()?;
    check_points(points)?;
    let d = spec.dim();
    let mut entries = DMatrix::zeros(points.len(), d);
    let mut row = vec![0.0; d];
    for (r, p) in points.iter().enumerate() {
        basis_row(spec, *p, &mut row);
        for (c, v) in row.iter().enumerate() {
            entries[(r, c)] = *v;
        }
    }
    Ok(BasisMatrix {
        spec: *spec,
        points: points.to_vec(),
        entries,
    })
}

/// Evaluates `sum_j beta_j phi_j(p)` at each point.
pub fn evaluate_expansion(spec: &BasisSpec, beta: &[f64], points: &[[f64; 2]]) -> Result<Vec<f64>> {
    if beta.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has {} entries, basis has {}",
            beta.len(),
            spec.dim()
        )));
    }
    let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let values: Vec<f64> = support.iter().map(|&j| beta[j]).collect();
    evaluate_sparse(spec, &support, &values, points)
}

/// Like [`evaluate_expansion`] but only touches the listed columns.
pub fn evaluate_sparse(
    spec: &BasisSpec,
    support: &[usize],
    values: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_points(points)?;
    if support.len() != values.len() {
        return Err(Error::DimensionMismatch("support and values differ in length".into()));
    }
    let d = spec.dim();
    if let Some(j) = support.iter().find(|&&j| j >= d) {
        return Err(Error::DimensionMismatch(format!("support index {j} >= {d}")));
    }
    let m = spec.factor_len();
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; m];
    Ok(points
        .iter()
        .map(|p| {
            factor(spec.k, spec.omega_x, p[0], &mut u);
            factor(spec.k, spec.omega_y, p[1], &mut v);
            support
                .iter()
                .zip(values)
                .map(|(&j, &b)| b * u[j / m] * v[j % m])
                .sum()
        })
        .collect())
}

/// `A * x` as a plain vector.
pub(crate) fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).as_slice().to_vec()
}
