//! Synthetic ground truth: ridge images with known orientation and
//! orientation fields drawn from known expansion coefficients.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{evaluate_expansion, BasisSpec};
use crate::coarse::{angle_from_double, fold_angle, grid_points, OrientationField};
use crate::error::{Error, Result};
use crate::imgio::GrayImage;

/// Ridge periods below this alias under the 3x3 Sobel operator.
pub const MIN_PERIOD: f64 = 4.0;

/// `1/2 + 1/2 cos(2 pi (x sin a + y cos a) / period)`: straight ridges at
/// angle `a` counter-clockwise from the x-axis, in displayed orientation.
#[inline]
pub fn ridge_intensity(angle: f64, period: f64, x: f64, y: f64) -> f64 {
    0.5 + 0.5 * (2.0 * PI * (x * angle.sin() + y * angle.cos()) / period).cos()
}

fn check_period(period: f64) -> Result<()> {
    if !period.is_finite() || period < MIN_PERIOD {
        return Err(Error::InvalidParameter(format!(
            "ridge period {period} below {MIN_PERIOD} px"
        )));
    }
    Ok(())
}

pub fn make_ridge_image(angle: f64, period: f64, width: usize, height: usize) -> Result<GrayImage> {
    check_period(period)?;
    if !(0.0..PI).contains(&angle) {
        return Err(Error::InvalidParameter(format!("angle {angle} outside [0, pi)")));
    }
    GrayImage::from_fn(width, height, |x, y| {
        ridge_intensity(angle, period, x as f64, y as f64)
    })
}

/// Image whose block `(c, r)` carries straight ridges at the field's angle
/// there. Invalid blocks are flat mid-gray, so they carry no gradient.
pub fn field_image(field: &OrientationField, period: f64) -> Result<GrayImage> {
    check_period(period)?;
    let w = field.block_size();
    if w.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!("fractional block size {w}")));
    }
    let w = w as usize;
    let cols = field.cols();
    GrayImage::from_fn(cols * w, field.rows() * w, |x, y| {
        let i = (y / w) * cols + x / w;
        if field.valid()[i] {
            ridge_intensity(field.theta()[i], period, x as f64, y as f64)
        } else {
            0.5
        }
    })
}

/// Field with `theta = 1/2 atan2(sum beta_sin phi, sum beta_cos phi)` at every block center.
pub fn field_from_coefficients(
    beta_cos: &[f64],
    beta_sin: &[f64],
    spec: &BasisSpec,
    grid: (usize, usize),
    w: f64,
) -> Result<OrientationField> {
    let points = grid_points(grid.0, grid.1);
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let c = evaluate_expansion(spec, beta_cos, &points)?;
    let s = evaluate_expansion(spec, beta_sin, &points)?;
    let theta = c.iter().zip(&s).map(|(c, s)| angle_from_double(*c, *s)).collect();
    OrientationField::from_angles(grid.0, grid.1, w, theta)
}

/// Dense pair with i.i.d. standard normal entries.
pub fn random_dense_coefficients(spec: &BasisSpec, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim();
    let mut draw = || (0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
    let c = draw();
    let s = draw();
    (c, s)
}

/// One vector with exactly `sparsity` nonzeros; magnitudes in `[0.5, 1.5)`
/// with random sign so no selected atom is near zero.
pub fn random_sparse_vector(d: usize, sparsity: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for j in sample(rng, d, sparsity).into_iter() {
        let mag: f64 = rng.random_range(0.5..1.5);
        out[j] = if rng.random::<bool>() { mag } else { -mag };
    }
    out
}

pub fn random_sparse_coefficients(
    spec: &BasisSpec,
    sparsity: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = spec.dim();
    if sparsity == 0 || sparsity > d {
        return Err(Error::InvalidParameter(format!(
            "sparsity {sparsity} outside [1, {d}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_sparse_vector(d, sparsity, &mut rng);
    let s = random_sparse_vector(d, sparsity, &mut rng);
    Ok((c, s))
}

/// Coefficients of the unit-modulus pair
/// `c + i s = exp(i (a wx x + b wy y + phase))`.
///
/// The resulting field `theta = (a wx x + b wy y + phase) / 2` has
/// `cos 2theta`, `sin 2theta` exactly in the span of the basis (at most four
/// nonzeros per half), so fits of it can be exact.
pub fn phase_ramp_coefficients(
    spec: &BasisSpec,
    a: i32,
    b: i32,
    phase: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = spec.k as i32;
    if a.abs() > k || b.abs() > k {
        return Err(Error::InvalidParameter(format!(
            "ramp frequencies ({a}, {b}) exceed basis order {k}"
        )));
    }
    // (index, weight) terms of cos(n t) and sin(n t) in the 1-D factor
    let cos_terms = |n: i32| -> Vec<(usize, f64)> {
        if n == 0 {
            vec![(0, 1.0)]
        } else {
            vec![(2 * n.unsigned_abs() as usize - 1, 1.0)]
        }
    };
    let sin_terms = |n: i32| -> Vec<(usize, f64)> {
        if n == 0 {
            vec![]
        } else {
            vec![(2 * n.unsigned_abs() as usize, f64::from(n.signum()))]
        }
    };
    let m = spec.factor_len();
    let d = spec.dim();
    let mut c = vec![0.0; d];
    let mut s = vec![0.0; d];
    let (sp, cp) = phase.sin_cos();
    let mut add = |fx: &[(usize, f64)], fy: &[(usize, f64)], wc: f64, ws: f64| {
        for &(i, u) in fx {
            for &(j, v) in fy {
                c[i * m + j] += wc * u * v;
                s[i * m + j] += ws * u * v;
            }
        }
    };
    // cos(A+B+p) = cos p (cAcB - sAsB) - sin p (sAcB + cAsB)
    // sin(A+B+p) = sin p (cAcB - sAsB) + cos p (sAcB + cAsB)
    let (ca, sa, cb, sb) = (cos_terms(a), sin_terms(a), cos_terms(b), sin_terms(b));
    add(&ca, &cb, cp, sp);
    add(&sa, &sb, -cp, -sp);
    add(&sa, &cb, -sp, cp);
    add(&ca, &sb, -sp, cp);
    Ok((c, s))
}

/// Analytic angle of a phase-ramp field at a normalized point.
pub fn phase_ramp_angle(spec: &BasisSpec, a: i32, b: i32, phase: f64, p: [f64; 2]) -> f64 {
    fold_angle(0.5 * (f64::from(a) * spec.omega_x * p[0] + f64::from(b) * spec.omega_y * p[1] + phase))
}

/// Seeded ramp parameters with `|a|, |b| <= order`.
pub fn random_phase_ramp(order: usize, seed: u64) -> (i32, i32, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = order as i32;
    let a = rng.random_range(-o..=o);
    let b = rng.random_range(-o..=o);
    let phase = rng.random_range(0.0..2.0 * PI);
    (a, b, phase)
}

/// Generator request, as accepted by the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthSpec {
    UniformRidges {
        /// Radians.
        angle: f64,
        period: f64,
        width: usize,
        height: usize,
    },
    FomfeField {
        k: usize,
        seed: u64,
        cols: usize,
        rows: usize,
        w: usize,
    },
    SparseFomfeField {
        k: usize,
        sparsity: usize,
        seed: u64,
        cols: usize,
        rows: usize,
        w: usize,
    },
    RampField {
        k: usize,
        seed: u64,
        cols: usize,
        rows: usize,
        w: usize,
    },
}

/// A generated field together with the coefficients that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    #[serde(flatten)]
    pub spec: SynthSpec,
    pub basis: BasisSpec,
    pub nnz_cos: usize,
    pub nnz_sin: usize,
    pub beta_cos: Vec<f64>,
    pub beta_sin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutput {
    Image(GrayImage),
    Field {
        field: OrientationField,
        meta: GeneratorMeta,
    },
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    let field_out = |k: usize, grid: (usize, usize), w: usize, (c, s): (Vec<f64>, Vec<f64>)| {
        let basis = BasisSpec::with_order(k);
        let field = field_from_coefficients(&c, &s, &basis, grid, w as f64)?;
        let nnz = |v: &[f64]| v.iter().filter(|x| **x != 0.0).count();
        Ok(SynthOutput::Field {
            field,
            meta: GeneratorMeta {
                spec: spec.clone(),
                basis,
                nnz_cos: nnz(&c),
                nnz_sin: nnz(&s),
                beta_cos: c,
                beta_sin: s,
            },
        })
    };
    match *spec {
        SynthSpec::UniformRidges {
            angle,
            period,
            width,
            height,
        } => make_ridge_image(angle, period, width, height).map(SynthOutput::Image),
        SynthSpec::FomfeField {
            k,
            seed,
            cols,
            rows,
            w,
        } => field_out(
            k,
            (cols, rows),
            w,
            random_dense_coefficients(&BasisSpec::with_order(k), seed),
        ),
        SynthSpec::SparseFomfeField {
            k,
            sparsity,
            seed,
            cols,
            rows,
            w,
        } => field_out(
            k,
            (cols, rows),
            w,
            random_sparse_coefficients(&BasisSpec::with_order(k), sparsity, seed)?,
        ),
        SynthSpec::RampField {
            k,
            seed,
            cols,
            rows,
            w,
        } => {
            let (a, b, phase) = random_phase_ramp(k, seed);
            field_out(
                k,
                (cols, rows),
                w,
                phase_ramp_coefficients(&BasisSpec::with_order(k), a, b, phase)?,
            )
        }
    }
}
