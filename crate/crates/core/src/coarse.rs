//! Block orientation fields and the gradient-based coarse estimator.
//!
//! Angles follow the displayed-image convention: counter-clockwise from the
//! x-axis with y pointing up, folded into `[0, pi)` because ridges are
//! undirected. Pixel rows grow downward, so the vertical Sobel response is
//! negated before entering the structure tensor.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{block_grid, BlockMask, GrayImage};
use crate::par::{self, Execution};

/// Folds any angle into `[0, pi)`.
#[inline]
pub fn fold_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Undirected angle encoded by a double-angle pair `(c, s)`.
#[inline]
pub fn angle_from_double(c: f64, s: f64) -> f64 {
    fold_angle(0.5 * s.atan2(c))
}

/// Normalized center of block `(col, row)` on a `cols x rows` grid.
#[inline]
pub fn block_center(col: usize, row: usize, cols: usize, rows: usize) -> [f64; 2] {
    [
        (col as f64 + 0.5) / cols as f64,
        (row as f64 + 0.5) / rows as f64,
    ]
}

/// Normalized block centers of a whole grid in row-major order.
pub fn grid_points(cols: usize, rows: usize) -> Vec<[f64; 2]> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| block_center(c, r, cols, rows)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FieldRepr", try_from = "FieldRepr")]
pub struct OrientationField {
    cols: usize,
    rows: usize,
    w: f64,
    theta: Vec<f64>,
    valid: Vec<bool>,
    coherence: Vec<f64>,
}

impl OrientationField {
    /// Builds a field, marking entries with a non-finite angle invalid and
    /// folding valid angles into `[0, pi)`.
    pub fn new(
        cols: usize,
        rows: usize,
        w: f64,
        theta: Vec<f64>,
        valid: Vec<bool>,
        coherence: Vec<f64>,
    ) -> Result<Self> {
        let len = cols * rows;
        if len == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if theta.len() != len || valid.len() != len || coherence.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "field arrays must all have {len} entries"
            )));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("block size {w}")));
        }
        let mut field = Self {
            cols,
            rows,
            w,
            theta,
            valid,
            coherence,
        };
        for i in 0..len {
            if field.valid[i] && field.theta[i].is_finite() {
                field.theta[i] = fold_angle(field.theta[i]);
                field.coherence[i] = field.coherence[i].clamp(0.0, 1.0);
            } else {
                field.valid[i] = false;
                field.theta[i] = f64::NAN;
                if !field.coherence[i].is_finite() {
                    field.coherence[i] = 0.0;
                }
            }
        }
        Ok(field)
    }

    /// All-valid field with unit coherence.
    pub fn from_angles(cols: usize, rows: usize, w: f64, theta: Vec<f64>) -> Result<Self> {
        let len = theta.len();
        Self::new(cols, rows, w, theta, vec![true; len], vec![1.0; len])
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn block_size(&self) -> f64 {
        self.w
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn coherence(&self) -> &[f64] {
        &self.coherence
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn mean_coherence(&self) -> Option<f64> {
        let n = self.count_valid();
        (n > 0).then(|| {
            self.coherence
                .iter()
                .zip(&self.valid)
                .filter(|(_, v)| **v)
                .map(|(c, _)| c)
                .sum::<f64>()
                / n as f64
        })
    }

    /// Copy with every block outside `mask` invalidated.
    pub fn masked(&self, mask: &BlockMask) -> Result<Self> {
        check_mask_dims(mask, self.cols, self.rows)?;
        let valid: Vec<bool> = self
            .valid
            .iter()
            .zip(mask.valid())
            .map(|(a, b)| *a && *b)
            .collect();
        Self::new(
            self.cols,
            self.rows,
            self.w,
            self.theta.clone(),
            valid,
            self.coherence.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    cols: usize,
    rows: usize,
    w: f64,
    theta: Vec<Option<f64>>,
    valid: Vec<bool>,
    coherence: Vec<Option<f64>>,
}

impl From<OrientationField> for FieldRepr {
    fn from(f: OrientationField) -> Self {
        let opt = |v: &f64| v.is_finite().then_some(*v);
        FieldRepr {
            cols: f.cols,
            rows: f.rows,
            w: f.w,
            theta: f.theta.iter().map(opt).collect(),
            valid: f.valid,
            coherence: f.coherence.iter().map(opt).collect(),
        }
    }
}

impl TryFrom<FieldRepr> for OrientationField {
    type Error = Error;

    fn try_from(r: FieldRepr) -> Result<Self> {
        let unwrap = |v: &Option<f64>| v.unwrap_or(f64::NAN);
        let theta: Vec<f64> = r.theta.iter().map(unwrap).collect();
        if theta
            .iter()
            .zip(&r.valid)
            .any(|(t, v)| *v && !(0.0..PI).contains(t))
        {
            return Err(Error::Malformed("valid angle outside [0, pi)".into()));
        }
        OrientationField::new(
            r.cols,
            r.rows,
            r.w,
            theta,
            r.valid,
            r.coherence.iter().map(unwrap).collect(),
        )
    }
}

fn check_mask_dims(mask: &BlockMask, cols: usize, rows: usize) -> Result<()> {
    if mask.cols() != cols || mask.rows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{} blocks, grid is {cols}x{rows}",
            mask.cols(),
            mask.rows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseOptions {
    /// Blocks below this coherence are invalidated. Zero disables the check.
    pub min_coherence: f64,
    pub execution: Execution,
}

impl Default for CoarseOptions {
    fn default() -> Self {
        Self {
            min_coherence: 0.0,
            execution: Execution::default(),
        }
    }
}

/// Structure-tensor sums of one block.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockTensor {
    pub gxx: f64,
    pub gyy: f64,
    pub gxy: f64,
}

impl BlockTensor {
    /// `(theta, coherence)`, or `None` when the block has no gradient energy.
    pub fn orientation(&self) -> Option<(f64, f64)> {
        let energy = self.gxx + self.gyy;
        if energy <= 0.0 {
            return None;
        }
        let diff = self.gxx - self.gyy;
        let cross = 2.0 * self.gxy;
        let theta = fold_angle(PI / 2.0 + 0.5 * cross.atan2(diff));
        let coherence = (diff.hypot(cross) / energy).clamp(0.0, 1.0);
        Some((theta, coherence))
    }
}

/// 3x3 Sobel response at `(x, y)` with edge replication; `gy` points up.
#[inline]
fn sobel(img: &GrayImage, x: usize, y: usize) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    let p = |xx, yy| img.get(xx, yy);
    let gx = (p(xp, ym) + 2.0 * p(xp, y) + p(xp, yp)) - (p(xm, ym) + 2.0 * p(xm, y) + p(xm, yp));
    let gy_down =
        (p(xm, yp) + 2.0 * p(x, yp) + p(xp, yp)) - (p(xm, ym) + 2.0 * p(x, ym) + p(xp, ym));
    (gx, -gy_down)
}

pub fn block_tensor(img: &GrayImage, col: usize, row: usize, w: usize) -> BlockTensor {
    let mut t = BlockTensor::default();
    for y in row * w..(row + 1) * w {
        for x in col * w..(col + 1) * w {
            let (gx, gy) = sobel(img, x, y);
            t.gxx += gx * gx;
            t.gyy += gy * gy;
            t.gxy += gx * gy;
        }
    }
    t
}

/// Coarse block orientation field by per-block structure-tensor averaging of
/// Sobel gradients. Blocks outside `mask` or without gradient energy are invalid.
pub fn estimate_coarse(
    image: &GrayImage,
    w: usize,
    mask: Option<&BlockMask>,
    options: &CoarseOptions,
) -> Result<OrientationField> {
    let (cols, rows) = block_grid(image, w)?;
    if let Some(mask) = mask {
        check_mask_dims(mask, cols, rows)?;
    }
    let blocks = par::map_range(options.execution, cols * rows, |i| {
        let (col, row) = (i % cols, i / cols);
        if mask.is_some_and(|m| !m.is_valid(col, row)) {
            return None;
        }
        block_tensor(image, col, row, w)
            .orientation()
            .filter(|(_, coh)| *coh >= options.min_coherence)
    });
    let mut theta = Vec::with_capacity(blocks.len());
    let mut valid = Vec::with_capacity(blocks.len());
    let mut coherence = Vec::with_capacity(blocks.len());
    for b in blocks {
        match b {
            Some((t, c)) => {
                theta.push(t);
                valid.push(true);
                coherence.push(c);
            }
            None => {
                theta.push(f64::NAN);
                valid.push(false);
                coherence.push(0.0);
            }
        }
    }
    OrientationField::new(cols, rows, w as f64, theta, valid, coherence)
}

/// Double-angle observations at the valid blocks of a field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleAngle {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    /// Row-major block index of each sample.
    pub blocks: Vec<usize>,
}

impl DoubleAngle {
    pub fn len(&self) -> usize {
        self.cos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }
}

pub fn double_angle(field: &OrientationField) -> Result<DoubleAngle> {
    let n = field.count_valid();
    if n == 0 {
        return Err(Error::NoValidBlocks);
    }
    let mut out = DoubleAngle {
        cos: Vec::with_capacity(n),
        sin: Vec::with_capacity(n),
        points: Vec::with_capacity(n),
        blocks: Vec::with_capacity(n),
    };
    for (i, (&t, &v)) in field.theta.iter().zip(&field.valid).enumerate() {
        if !v {
            continue;
        }
        let (s, c) = (2.0 * t).sin_cos();
        out.cos.push(c);
        out.sin.push(s);
        out.points
            .push(block_center(i % field.cols, i / field.cols, field.cols, field.rows));
        out.blocks.push(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ridges(angle_deg: f64, period: f64, size: usize) -> GrayImage {
        let a = angle_deg.to_radians();
        GrayImage::from_fn(size, size, |x, y| {
            0.5 + 0.5 * (2.0 * PI * (x as f64 * a.sin() + y as f64 * a.cos()) / period).cos()
        })
        .unwrap()
    }

    fn ang_diff_deg(a: f64, b: f64) -> f64 {
        let d = (a - b).abs() % PI;
        d.min(PI - d).to_degrees()
    }

    #[test]
    fn sinusoid_at_30_degrees() {
        let img = ridges(30.0, 10.0, 256);
        let f = estimate_coarse(&img, 16, None, &CoarseOptions::default()).unwrap();
        assert_eq!((f.cols(), f.rows()), (16, 16));
        for r in 1..15 {
            for c in 1..15 {
                let t = f.theta()[r * 16 + c];
                assert!(ang_diff_deg(t, 30f64.to_radians()) < 2.0, "block ({c},{r}): {}", t.to_degrees());
            }
        }
    }

    #[test]
    fn constant_image_all_invalid() {
        let img = GrayImage::new(64, 64, vec![0.5; 64 * 64]).unwrap();
        let f = estimate_coarse(&img, 16, None, &CoarseOptions::default()).unwrap();
        assert_eq!(f.count_valid(), 0);
        assert!(f.theta().iter().all(|t| t.is_nan()));
        assert!(matches!(double_angle(&f), Err(Error::NoValidBlocks)));
    }

    #[test]
    fn mask_gates_blocks() {
        let img = ridges(30.0, 10.0, 256);
        let full = estimate_coarse(&img, 16, None, &CoarseOptions::default()).unwrap();
        let mask = BlockMask::rect(16, 16, 0, 0, 8, 16);
        let half = estimate_coarse(&img, 16, Some(&mask), &CoarseOptions::default()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let i = r * 16 + c;
                if c < 8 {
                    assert!(half.valid()[i]);
                    assert_eq!(half.theta()[i], full.theta()[i]);
                } else {
                    assert!(!half.valid()[i]);
                }
            }
        }
        let wrong = BlockMask::all_valid(4, 4);
        assert!(estimate_coarse(&img, 16, Some(&wrong), &CoarseOptions::default()).is_err());
    }

    #[test]
    fn image_smaller_than_block() {
        let img = GrayImage::new(8, 8, vec![0.0; 64]).unwrap();
        assert!(estimate_coarse(&img, 16, None, &CoarseOptions::default()).is_err());
    }

    #[test]
    fn min_coherence_invalidates() {
        // isotropic checkerboard-ish texture has low coherence
        let img = GrayImage::from_fn(64, 64, |x, y| {
            0.5 + 0.25 * ((x as f64) * 0.9).cos() + 0.25 * ((y as f64) * 0.9).cos()
        })
        .unwrap();
        let loose = estimate_coarse(&img, 16, None, &CoarseOptions::default()).unwrap();
        let strict = CoarseOptions {
            min_coherence: 0.99,
            ..Default::default()
        };
        let tight = estimate_coarse(&img, 16, None, &strict).unwrap();
        assert!(tight.count_valid() < loose.count_valid());
    }

    #[test]
    fn double_angle_examples() {
        let mk = |t: f64| OrientationField::from_angles(2, 2, 16.0, vec![t; 4]).unwrap();
        let d = double_angle(&mk(0.0)).unwrap();
        assert_eq!(d.cos, vec![1.0; 4]);
        assert_eq!(d.sin, vec![0.0; 4]);
        let d = double_angle(&mk(PI / 4.0)).unwrap();
        assert!(d.cos.iter().all(|c| c.abs() < 1e-15));
        assert!(d.sin.iter().all(|s| (s - 1.0).abs() < 1e-15));
        let d = double_angle(&mk(3.0 * PI / 4.0)).unwrap();
        assert!(d.cos.iter().all(|c| c.abs() < 1e-15));
        assert!(d.sin.iter().all(|s| (s + 1.0).abs() < 1e-15));
        assert_eq!(d.points[3], [0.75, 0.75]);
    }

    #[test]
    fn double_angle_skips_invalid_in_row_major_order() {
        let f = OrientationField::new(
            3,
            1,
            16.0,
            vec![0.1, f64::NAN, 0.3],
            vec![true, false, true],
            vec![1.0, 0.0, 1.0],
        )
        .unwrap();
        let d = double_angle(&f).unwrap();
        assert_eq!(d.blocks, vec![0, 2]);
        assert_eq!(d.points, vec![[1.0 / 6.0, 0.5], [5.0 / 6.0, 0.5]]);
    }

    #[test]
    fn json_encodes_nan_as_null() {
        let f = OrientationField::new(
            2,
            1,
            16.0,
            vec![0.5, f64::NAN],
            vec![true, false],
            vec![0.9, 0.0],
        )
        .unwrap();
        let json = f.to_json().unwrap();
        assert!(json.contains("\"theta\":[0.5,null]"), "{json}");
        let back = OrientationField::from_json(&json).unwrap();
        assert_eq!(back.valid(), f.valid());
        assert_eq!(back.theta()[0], 0.5);
        assert!(back.theta()[1].is_nan());
    }

    #[test]
    fn json_rejects_out_of_range_angle() {
        let bad = r#"{"cols":1,"rows":1,"w":16.0,"theta":[4.0],"valid":[true],"coherence":[1.0]}"#;
        assert!(OrientationField::from_json(bad).is_err());
    }

    #[test]
    fn rotation_equivariance() {
        for step in 0..12 {
            let phi = 15.0 * step as f64;
            let f = estimate_coarse(&ridges(phi, 10.0, 128), 16, None, &CoarseOptions::default())
                .unwrap();
            for r in 1..7 {
                for c in 1..7 {
                    let t = f.theta()[r * 8 + c];
                    assert!(ang_diff_deg(t, phi.to_radians()) <= 3.0, "phi={phi}");
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let img = ridges(70.0, 9.0, 128);
        let seq = CoarseOptions {
            execution: Execution::Sequential,
            ..Default::default()
        };
        let par = CoarseOptions {
            execution: Execution::Parallel,
            ..Default::default()
        };
        let a = estimate_coarse(&img, 16, None, &seq).unwrap();
        let b = estimate_coarse(&img, 16, None, &par).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    proptest! {
        #[test]
        fn double_angle_inverts(theta in 0.0..PI) {
            let f = OrientationField::from_angles(1, 1, 16.0, vec![theta]).unwrap();
            let d = double_angle(&f).unwrap();
            let back = angle_from_double(d.cos[0], d.sin[0]);
            prop_assert!(ang_diff_deg(back, theta).to_radians() <= 1e-12);
            prop_assert!((d.cos[0].powi(2) + d.sin[0].powi(2) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn affine_intensity_invariance(angle in 0.0..180.0f64, a in 0.2..1.0f64, b in 0.0..0.2f64) {
            let img = ridges(angle, 10.0, 64);
            let scaled = img.map_intensity(a * 0.8, b);
            let f1 = estimate_coarse(&img, 16, None, &CoarseOptions::default()).unwrap();
            let f2 = estimate_coarse(&scaled, 16, None, &CoarseOptions::default()).unwrap();
            for (t1, t2) in f1.theta().iter().zip(f2.theta()) {
                prop_assert!(ang_diff_deg(*t1, *t2) < 1e-9);
            }
        }
    }
}
