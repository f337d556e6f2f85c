//! SVG quiver rendering of orientation fields.

use std::fmt::Write as _;

use base64::Engine as _;

use crate::coarse::OrientationField;
use crate::error::{Error, Result};
use crate::imgio::{encode_png, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    /// Segment length as a fraction of the block size, in `(0, 1]`.
    pub stroke_length: f64,
    /// Stroke width in pixels.
    pub stroke_width: f64,
    /// Draw over the underlay image when one is given; otherwise on white.
    pub overlay: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            stroke_length: 0.8,
            stroke_width: 1.5,
            overlay: true,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.stroke_length > 0.0 && self.stroke_length <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "stroke length {} outside (0, 1]",
                self.stroke_length
            )));
        }
        if !(self.stroke_width > 0.0 && self.stroke_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stroke width {}",
                self.stroke_width
            )));
        }
        Ok(())
    }
}

/// Segment endpoints `[x1, y1, x2, y2]` in SVG (y-down) pixel coordinates.
pub fn segments(field: &OrientationField, style: &RenderStyle) -> Vec<[f64; 4]> {
    let w = field.block_size();
    let half = 0.5 * style.stroke_length * w;
    let mut out = Vec::with_capacity(field.count_valid());
    for r in 0..field.rows() {
        for c in 0..field.cols() {
            let i = r * field.cols() + c;
            if !field.valid()[i] {
                continue;
            }
            let (s, co) = field.theta()[i].sin_cos();
            let (cx, cy) = ((c as f64 + 0.5) * w, (r as f64 + 0.5) * w);
            // angles are counter-clockwise with y up; SVG y grows downward
            let (dx, dy) = (half * co, -half * s);
            out.push([cx - dx, cy - dy, cx + dx, cy + dy]);
        }
    }
    out
}

/// Renders one line segment per valid block as an SVG 1.1 document.
pub fn render_svg(
    field: &OrientationField,
    underlay: Option<&GrayImage>,
    style: &RenderStyle,
) -> Result<String> {
    style.validate()?;
    let w = field.block_size();
    let (width, height) = (field.cols() as f64 * w, field.rows() as f64 * w);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        fmt_num(width),
        fmt_num(height),
        fmt_num(width),
        fmt_num(height)
    );
    match underlay.filter(|_| style.overlay) {
        Some(img) => {
            let png = encode_png(img.width(), img.height(), &img.to_u8())?;
            let data = base64::engine::general_purpose::STANDARD.encode(png);
            let _ = writeln!(
                svg,
                r#"<image x="0" y="0" width="{}" height="{}" preserveAspectRatio="none" xlink:href="data:image/png;base64,{data}"/>"#,
                img.width(),
                img.height()
            );
        }
        None => {
            let _ = writeln!(
                svg,
                r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
                fmt_num(width),
                fmt_num(height)
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<g stroke="#d01c1c" stroke-width="{}" stroke-linecap="round" fill="none">"##,
        fmt_num(style.stroke_width)
    );
    for [x1, y1, x2, y2] in segments(field, style) {
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
            fmt_num(x1),
            fmt_num(y1),
            fmt_num(x2),
            fmt_num(y2)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// Fixed three-decimal formatting without trailing zeros.
fn fmt_num(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_draws_horizontal_segments() {
        let f = OrientationField::from_angles(4, 3, 16.0, vec![0.0; 12]).unwrap();
        let segs = segments(&f, &RenderStyle::default());
        assert_eq!(segs.len(), 12);
        assert!(segs.iter().all(|s| s[1] == s[3]));
        for (a, b) in segs[0].iter().zip([1.6, 8.0, 14.4, 8.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_angle_points_up_right() {
        let f = OrientationField::from_angles(1, 1, 16.0, vec![std::f64::consts::FRAC_PI_4]).unwrap();
        let [x1, y1, x2, y2] = segments(&f, &RenderStyle::default())[0];
        assert!(x2 > x1 && y2 < y1);
    }

    #[test]
    fn document_is_well_formed() {
        let f = OrientationField::new(
            2,
            2,
            16.0,
            vec![0.1, 0.5, f64::NAN, 2.0],
            vec![true, true, false, true],
            vec![1.0; 4],
        )
        .unwrap();
        let img = GrayImage::new(32, 32, vec![0.25; 1024]).unwrap();
        for underlay in [None, Some(&img)] {
            let svg = render_svg(&f, underlay, &RenderStyle::default()).unwrap();
            let doc = roxmltree::Document::parse(&svg).unwrap();
            let lines = doc.descendants().filter(|n| n.has_tag_name("line")).count();
            assert_eq!(lines, 3);
            assert_eq!(
                doc.descendants().any(|n| n.has_tag_name("image")),
                underlay.is_some()
            );
        }
    }

    #[test]
    fn style_validation() {
        let f = OrientationField::from_angles(1, 1, 16.0, vec![0.0]).unwrap();
        let bad = RenderStyle {
            stroke_length: 1.5,
            ..Default::default()
        };
        assert!(render_svg(&f, None, &bad).is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(16.0), "16");
        assert_eq!(fmt_num(1.25), "1.25");
        assert_eq!(fmt_num(-0.0001), "0");
        assert_eq!(fmt_num(2.0 / 3.0), "0.667");
    }
}
