//! Seeded Monte-Carlo recovery experiments for OMP and compressed sensing.
//!
//! Each trial draws an `S`-sparse `(cos, sin)` coefficient pair, synthesizes noiseless
//! observations on a block grid and tries to recover the vector, optionally
//! after Gaussian compression. Trials are independent and run in parallel.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{build_basis, mat_vec, BasisSpec};
use crate::coarse::grid_points;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::sensing::{make_sensing_matrix, measure};
use crate::solvers::{solve_ls, solve_omp, OmpConfig};
use crate::synth::random_sparse_vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub spec: BasisSpec,
    pub grid: (usize, usize),
    pub sparsity: usize,
    pub tol: f64,
    /// Compress to this many measurements before OMP; `None` uses the samples directly.
    pub measurements: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            spec: BasisSpec::default(),
            grid: (32, 32),
            sparsity: 20,
            tol: 1e-6,
            measurements: None,
            trials: 100,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// Each trial recovers a `(cos, sin)` pair; fields report the worse half.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    /// Both halves recovered their exact support.
    pub exact_support: bool,
    /// `||beta_hat - beta*|| / ||beta*||`.
    pub relative_error: f64,
    /// Largest deviation from least squares restricted to the true support.
    pub oracle_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub outcomes: Vec<TrialOutcome>,
}

impl TrialSummary {
    pub fn exact_support_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.exact_support).count()
    }

    pub fn recovered_within(&self, rel_tol: f64) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.relative_error <= rel_tol)
            .count()
    }

    pub fn max_oracle_gap_on_exact(&self) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.exact_support)
            .map(|o| o.oracle_gap)
            .fold(0.0, f64::max)
    }
}

/// Seed for trial `t`; chosen so that neighbouring runs do not share draws.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64)
}

pub fn run_trials(config: &TrialConfig) -> Result<TrialSummary> {
    let (cols, rows) = config.grid;
    let phi = build_basis(&grid_points(cols, rows), &config.spec)?.into_matrix();
    let d = phi.ncols();
    if config.sparsity == 0 || config.sparsity > d {
        return Err(Error::InvalidParameter(format!(
            "sparsity {} outside [1, {d}]",
            config.sparsity
        )));
    }
    let outcomes = par::map_range(config.execution, config.trials, |t| {
        run_one(&phi, config, trial_seed(config.seed, t))
    });
    Ok(TrialSummary {
        outcomes: outcomes.into_iter().collect::<Result<_>>()?,
    })
}

fn run_one(phi: &DMatrix<f64>, config: &TrialConfig, seed: u64) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truths = [
        random_sparse_vector(phi.ncols(), config.sparsity, &mut rng),
        random_sparse_vector(phi.ncols(), config.sparsity, &mut rng),
    ];
    let psi = match config.measurements {
        None => None,
        Some(m) => Some(make_sensing_matrix(m, phi.nrows(), seed)?),
    };
    let a = match &psi {
        None => phi.clone(),
        Some(psi) => psi.matrix() * phi,
    };
    let mut outcome = TrialOutcome {
        seed,
        exact_support: true,
        relative_error: 0.0,
        oracle_gap: 0.0,
    };
    for truth in &truths {
        let b = mat_vec(phi, truth);
        let y = match &psi {
            None => b,
            Some(psi) => measure(psi, &b)?,
        };
        let (exact, rel, gap) = recover(&a, &y, truth, config)?;
        outcome.exact_support &= exact;
        outcome.relative_error = outcome.relative_error.max(rel);
        outcome.oracle_gap = outcome.oracle_gap.max(gap);
    }
    Ok(outcome)
}

/// Runs OMP on `(a, y)` and compares against `truth` and the true-support LS fit.
fn recover(a: &DMatrix<f64>, y: &[f64], truth: &[f64], config: &TrialConfig) -> Result<(bool, f64, f64)> {
    let d = a.ncols();
    let sol = solve_omp(
        a,
        y,
        &OmpConfig {
            sparsity: config.sparsity,
            tol: config.tol,
        },
    )?;
    let true_support: Vec<usize> = (0..d).filter(|&j| truth[j] != 0.0).collect();
    let est = sol.to_dense(d);
    let err: f64 = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = truth.iter().map(|t| t * t).sum::<f64>().sqrt();

    let restricted = a.select_columns(true_support.iter());
    let oracle = solve_ls(&restricted, y)?;
    let gap = true_support
        .iter()
        .zip(&oracle.beta)
        .map(|(&j, v)| (est[j] - v).abs())
        .fold(0.0, f64::max);
    Ok((sol.support == true_support, err / norm, gap))
}
