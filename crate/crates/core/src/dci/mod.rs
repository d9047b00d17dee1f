//! Data model for diffusion-curve images.
//!
//! An image is a canvas plus a set of attributed cubic Bezier splines. Each
//! curve carries color control points `(r, g, b, u)` on its left and right
//! side, where `u` is a position in the curve's global parameter domain
//! `[0, segments]` (segment `l` covers `[l, l+1]`). Channel values are
//! sRGB-encoded in `[0, 1]`; 8-bit quantization happens only at raster output.
//!
//! Closedness is an explicit flag rather than being inferred from endpoint
//! coincidence, so normal orientation and diffusion sides stay unambiguous.

mod io;

pub use io::{load_dci, load_glyph_params, save_dci, save_glyph_params};

use crate::error::{Error, Result};
use crate::geom::Point;
use serde::{Deserialize, Serialize};

/// One color constraint on a curve side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPoint {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    /// Curve parameter in the owning curve's domain.
    pub u: f64,
}

impl ColorPoint {
    pub fn rgb(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn with_rgb(rgb: [f64; 3], u: f64) -> Self {
        ColorPoint {
            r: rgb[0],
            g: rgb[1],
            b: rgb[2],
            u,
        }
    }
}

/// Which side(s) of a barrier curve stay active as color sources. The wall
/// itself always blocks diffusion across the curve; for margin barriers the
/// flagged side is the icon's inner region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierSide {
    Left,
    Right,
    Both,
}

/// A cubic Bezier spline with color attributes and an optional barrier flag.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierCurve {
    /// `3k + 1` control points for `k` segments.
    pub control_points: Vec<Point>,
    pub colors_left: Vec<ColorPoint>,
    pub colors_right: Vec<ColorPoint>,
    pub closed: bool,
    pub barrier: bool,
    pub barrier_side: BarrierSide,
}

impl BezierCurve {
    pub fn open(control_points: Vec<Point>) -> Self {
        BezierCurve {
            control_points,
            colors_left: Vec::new(),
            colors_right: Vec::new(),
            closed: false,
            barrier: false,
            barrier_side: BarrierSide::Both,
        }
    }

    pub fn segments(&self) -> usize {
        (self.control_points.len().saturating_sub(1)) / 3
    }

    /// Upper end of the global parameter domain (`= segments`).
    pub fn param_max(&self) -> f64 {
        self.segments() as f64
    }

    pub fn segment(&self, l: usize) -> [Point; 4] {
        let p = &self.control_points;
        [p[3 * l], p[3 * l + 1], p[3 * l + 2], p[3 * l + 3]]
    }

    /// De Casteljau evaluation at global parameter `u` in `[0, segments]`.
    pub fn eval(&self, u: f64) -> Point {
        let (l, t) = self.locate(u);
        let [p0, p1, p2, p3] = self.segment(l);
        let a = p0.lerp(p1, t);
        let b = p1.lerp(p2, t);
        let c = p2.lerp(p3, t);
        let d = a.lerp(b, t);
        let e = b.lerp(c, t);
        d.lerp(e, t)
    }

    /// First derivative with respect to the global parameter.
    pub fn deriv(&self, u: f64) -> Point {
        let (l, t) = self.locate(u);
        let [p0, p1, p2, p3] = self.segment(l);
        let a = (p1 - p0) * 3.0;
        let b = (p2 - p1) * 3.0;
        let c = (p3 - p2) * 3.0;
        let ab = a.lerp(b, t);
        let bc = b.lerp(c, t);
        ab.lerp(bc, t)
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let n = self.segments().max(1);
        let clamped = u.clamp(0.0, n as f64);
        let l = (clamped.floor() as usize).min(n - 1);
        (l, clamped - l as f64)
    }

    /// Uniform-parameter polyline with roughly `stride` spacing in canvas
    /// units, returned as `(u, point)` samples including both ends.
    pub fn sample_polyline(&self, stride: f64) -> Vec<(f64, Point)> {
        let mut out = Vec::new();
        for l in 0..self.segments() {
            let [p0, p1, p2, p3] = self.segment(l);
            let hull = p0.dist(p1) + p1.dist(p2) + p2.dist(p3);
            let steps = ((hull / stride).ceil() as usize).max(2);
            let from = if l == 0 { 0 } else { 1 };
            for s in from..=steps {
                let t = s as f64 / steps as f64;
                let u = l as f64 + t;
                out.push((u, self.eval(u)));
            }
        }
        if out.is_empty() {
            out.push((0.0, self.control_points[0]));
        } else {
            out.insert(0, (0.0, self.eval(0.0)));
        }
        out
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let n = self.control_points.len();
        if n < 4 || (n - 1) % 3 != 0 {
            return Err(Error::curve(
                index,
                format!("control_points length {n} is not 3k+1 for k >= 1"),
            ));
        }
        if let Some(p) = self.control_points.iter().find(|p| !p.is_finite()) {
            return Err(Error::curve(
                index,
                format!("non-finite control point ({}, {})", p.x, p.y),
            ));
        }
        if self.closed {
            let first = self.control_points[0];
            let last = *self.control_points.last().unwrap();
            if first.dist(last) > 1e-6 {
                return Err(Error::curve(
                    index,
                    "closed curve endpoints do not coincide",
                ));
            }
        }
        let max_u = self.param_max();
        for (side, colors) in [("left", &self.colors_left), ("right", &self.colors_right)] {
            let mut prev = f64::NEG_INFINITY;
            for c in colors.iter() {
                for (ch, v) in [("r", c.r), ("g", c.g), ("b", c.b)] {
                    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                        return Err(Error::curve(
                            index,
                            format!("{side} color channel {ch}={v} outside [0,1]"),
                        ));
                    }
                }
                if !c.u.is_finite() || c.u < -1e-12 || c.u > max_u + 1e-12 {
                    return Err(Error::curve(
                        index,
                        format!("{side} color parameter u={} outside [0, {max_u}]", c.u),
                    ));
                }
                if c.u < prev {
                    return Err(Error::curve(
                        index,
                        format!("{side} color points not sorted by u at u={}", c.u),
                    ));
                }
                prev = c.u;
            }
        }
        Ok(())
    }
}

/// A diffusion-curve image: canvas extent plus attributed curves.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCurveImage {
    pub width: f64,
    pub height: f64,
    pub curves: Vec<BezierCurve>,
}

impl DiffusionCurveImage {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !(self.height > 0.0) {
            return Err(Error::validation(format!(
                "canvas {}x{} must be positive",
                self.width, self.height
            )));
        }
        for (i, c) in self.curves.iter().enumerate() {
            c.validate(i)?;
        }
        Ok(())
    }
}

/// Wave profile used for geometric contour modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveShape {
    #[serde(alias = "sin")]
    Sinusoidal,
    #[serde(alias = "rect")]
    Rectangular,
    #[serde(alias = "saw")]
    Sawtooth,
}

impl std::fmt::Display for WaveShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WaveShape::Sinusoidal => "sinusoidal",
            WaveShape::Rectangular => "rectangular",
            WaveShape::Sawtooth => "sawtooth",
        };
        f.write_str(s)
    }
}

/// Finite margin width in canvas units, or no margin at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginWidth {
    Infinite,
    Finite(f64),
}

impl MarginWidth {
    pub fn is_finite(&self) -> bool {
        matches!(self, MarginWidth::Finite(_))
    }
}

/// The seven visual-variable settings of one glyph, in quantized level units.
/// Level 0 means the variable is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphParams {
    pub shape: WaveShape,
    pub geom_freq: u32,
    pub geom_ampl: u32,
    pub color_freq: u32,
    pub color_ampl: u32,
    #[serde(with = "io::margin_serde")]
    pub margin_width: MarginWidth,
    pub inner_color: Option<[f64; 3]>,
}

impl Default for GlyphParams {
    fn default() -> Self {
        GlyphParams {
            shape: WaveShape::Sinusoidal,
            geom_freq: 0,
            geom_ampl: 0,
            color_freq: 0,
            color_ampl: 0,
            margin_width: MarginWidth::Infinite,
            inner_color: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pt;

    fn line_curve() -> BezierCurve {
        BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 0.0),
            pt(2.0, 0.0),
            pt(3.0, 0.0),
        ])
    }

    #[test]
    fn bezier_eval_endpoints() {
        let c = line_curve();
        assert_eq!(c.eval(0.0), pt(0.0, 0.0));
        assert_eq!(c.eval(1.0), pt(3.0, 0.0));
    }

    #[test]
    fn control_point_count_invariant() {
        let mut c = line_curve();
        c.control_points.push(pt(4.0, 0.0));
        c.control_points.push(pt(5.0, 0.0));
        let err = c.validate(7).unwrap_err();
        assert!(err.to_string().contains("3k+1"), "{err}");
        assert!(err.to_string().contains("curve 7"), "{err}");
    }

    #[test]
    fn color_point_order_checked() {
        let mut c = line_curve();
        c.colors_left = vec![
            ColorPoint::with_rgb([0.0; 3], 0.8),
            ColorPoint::with_rgb([0.0; 3], 0.2),
        ];
        assert!(c.validate(0).is_err());
    }
}
