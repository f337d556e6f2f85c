//! Dense least squares and orthogonal matching pursuit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Above this condition estimate the least-squares solve switches to the
/// minimum-norm SVD route.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Columns shorter than this fraction of the longest column count as zero
/// during atom selection.
const ZERO_COLUMN_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub beta: Vec<f64>,
    pub residual_norm: f64,
    /// True when the minimum-norm fallback was used.
    pub min_norm: bool,
}

fn check_system(a: &DMatrix<f64>, b: &[f64]) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::DimensionMismatch("empty system matrix".into()));
    }
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, right-hand side has {}",
            a.nrows(),
            b.len()
        )));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("system matrix"));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    Ok(())
}

/// Minimizes `||b - A beta||_2`.
///
/// Full-rank tall systems go through Householder QR. Wide, rank-deficient or
/// badly conditioned systems (diagonal ratio of R above [`CONDITION_LIMIT`])
/// return the minimum-norm minimizer from a truncated SVD instead.
pub fn solve_ls(a: &DMatrix<f64>, b: &[f64]) -> Result<LsSolution> {
    check_system(a, b)?;
    let rhs = DVector::from_column_slice(b);
    let (beta, min_norm) = match qr_solve(a, &rhs) {
        Some(x) => (x, false),
        None => (min_norm_solve(a, &rhs), true),
    };
    let residual_norm = (&rhs - a * &beta).norm();
    Ok(LsSolution {
        beta: beta.as_slice().to_vec(),
        residual_norm,
        min_norm,
    })
}

fn qr_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, d) = a.shape();
    if n < d {
        return None;
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..d {
        let v = r[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_nan() || lo <= 0.0 || hi / lo > CONDITION_LIMIT {
        return None;
    }
    let mut qtb = rhs.clone();
    qr.q_tr_mul(&mut qtb);
    r.solve_upper_triangular(&qtb.rows(0, d).into_owned())
}

fn min_norm_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    svd.solve(rhs, smax / CONDITION_LIMIT)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpConfig {
    /// Sparsity budget `S`.
    pub sparsity: usize,
    /// Stop once `||r|| <= tol * ||b||`.
    pub tol: f64,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            sparsity: 20,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    /// Strictly increasing column indices.
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    pub sparsity: usize,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual norm before the first selection and after every refit.
    pub residual_history: Vec<f64>,
    /// Columns in the order they were selected.
    pub selection_order: Vec<usize>,
}

impl SparseSolution {
    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Orthogonal matching pursuit.
///
/// Each step picks the column with the largest normalized correlation
/// `|a_j . r| / ||a_j||` (lowest index wins ties), then refits all selected
/// columns by least squares against `b`. Stops when the support reaches the
/// budget or the residual falls to `tol * ||b||`. Returned values are the raw
/// (unnormalized) least-squares coefficients on the final support.
pub fn solve_omp(a: &DMatrix<f64>, b: &[f64], config: &OmpConfig) -> Result<SparseSolution> {
    check_system(a, b)?;
    let (n, d) = a.shape();
    let s = config.sparsity;
    if s == 0 || s > n.min(d) {
        return Err(Error::InvalidParameter(format!(
            "sparsity {s} outside [1, {}]",
            n.min(d)
        )));
    }
    if config.tol.is_nan() || config.tol < 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance {}", config.tol)));
    }

    let rhs = DVector::from_column_slice(b);
    let b_norm = rhs.norm();
    let col_norms: Vec<f64> = (0..d).map(|j| a.column(j).norm()).collect();
    let longest = col_norms.iter().copied().fold(0.0, f64::max);
    let usable: Vec<bool> = col_norms
        .iter()
        .map(|&c| c > ZERO_COLUMN_RTOL * longest && c > 0.0)
        .collect();

    let mut selected: Vec<usize> = Vec::with_capacity(s);
    let mut taken = vec![false; d];
    let mut coef = DVector::zeros(0);
    let mut residual = rhs.clone();
    let mut history = vec![b_norm];

    loop {
        let r_norm = *history.last().unwrap();
        if selected.len() == s || r_norm <= config.tol * b_norm {
            break;
        }
        let corr = a.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..d {
            if taken[j] || !usable[j] {
                continue;
            }
            let c = corr[j].abs() / col_norms[j];
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((j, c));
            }
        }
        let Some((j, c)) = best else {
            if selected.is_empty() {
                return Err(Error::ZeroColumns);
            }
            break;
        };
        if c == 0.0 {
            // residual is orthogonal to every remaining column
            break;
        }
        selected.push(j);
        taken[j] = true;
        let sub = a.select_columns(&selected);
        let fit = solve_ls(&sub, b)?;
        coef = DVector::from_vec(fit.beta);
        residual = &rhs - &sub * &coef;
        history.push(residual.norm());
    }

    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.sort_by_key(|&i| selected[i]);
    Ok(SparseSolution {
        support: order.iter().map(|&i| selected[i]).collect(),
        values: order.iter().map(|&i| coef[i]).collect(),
        sparsity: s,
        residual_norm: *history.last().unwrap(),
        iterations: selected.len(),
        residual_history: history,
        selection_order: selected,
    })
}
