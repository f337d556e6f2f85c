//! Gaussian compressed-sensing matrices and the measurement-count rule.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// `min(n, ceil(C * S * log(n / S)))`.
pub fn required_measurements(sparsity: usize, n: usize, c: f64, base: LogBase) -> Result<usize> {
    if sparsity == 0 || sparsity >= n {
        return Err(Error::InvalidParameter(format!(
            "sparsity {sparsity} must satisfy 1 <= S < n = {n}"
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("constant C = {c}")));
    }
    let s = sparsity as f64;
    let m = (c * s * base.log(n as f64 / s)).ceil();
    Ok((m as usize).clamp(1, n))
}

/// Measurement matrix with i.i.d. `N(0, 1/m)` entries, regenerated from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    seed: u64,
    entries: DMatrix<f64>,
}

impl SensingMatrix {
    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn meta(&self, log_base: LogBase) -> SensingMeta {
        SensingMeta {
            m: self.m(),
            n: self.n(),
            seed: self.seed,
            scale: SCALE_INV_SQRT_M.to_string(),
            log_base,
        }
    }
}

pub const SCALE_INV_SQRT_M: &str = "inv-sqrt-m";

/// Entries are drawn row by row from ChaCha8 seeded with `seed`.
pub fn make_sensing_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || n == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "sensing matrix needs 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let mut entries = DMatrix::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            entries[(r, c)] = z * scale;
        }
    }
    Ok(SensingMatrix { seed, entries })
}

/// `g = Psi b`.
pub fn measure(psi: &SensingMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != psi.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} entries, sensing matrix has {} columns",
            b.len(),
            psi.n()
        )));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    Ok(crate::basis::mat_vec(&psi.entries, b))
}

/// Sensing block of a model file. The matrix itself is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensingMeta {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub scale: String,
    pub log_base: LogBase,
}

impl SensingMeta {
    pub fn regenerate(&self) -> Result<SensingMatrix> {
        if self.scale != SCALE_INV_SQRT_M {
            return Err(Error::Malformed(format!("unknown sensing scale {:?}", self.scale)));
        }
        make_sensing_matrix(self.m, self.n, self.seed)
    }
}
