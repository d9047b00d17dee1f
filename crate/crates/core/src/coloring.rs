//! Periodic luminance modulation along contours, margin segmentation via
//! diffusion barriers, and inner-color assignment.
//!
//! Color waves alternate equidistant arc-length intervals of the original and
//! a luminance-modified color. Interval boundaries get a pair of color points
//! with a small parametric offset so the transition renders hard. Luminance
//! here means the CIE relative luminance of the linearized RGB value,
//! `0.2126 r + 0.7152 g + 0.0722 b`; modulation scales a color toward white
//! or black until the target luminance is met, which keeps the hue direction.

use crate::dci::{BarrierSide, ColorPoint, DiffusionCurveImage, MarginWidth};
use crate::dist::DistanceField;
use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, rot90, Point};
use crate::percept::{PerceptualModel, Variable};
use crate::render::{linearize, linear_to_srgb};
use crate::spline::{bspline_to_bezier, clamped_knots, ArcLengthTable, BSplineCurve, BasisMatrix};
use crate::wave::{outward_sign, Modulated};
use serde::Deserialize;
use std::path::Path;

/// Piecewise-linear color ramp lookup with constant extension beyond the
/// outermost points. Returns the stored (sRGB) channel values.
pub fn ramp_color(colors: &[ColorPoint], u: f64) -> Option<[f64; 3]> {
    match colors.len() {
        0 => None,
        1 => Some(colors[0].rgb()),
        _ => {
            if u <= colors[0].u {
                return Some(colors[0].rgb());
            }
            let last = colors.last().unwrap();
            if u >= last.u {
                return Some(last.rgb());
            }
            let idx = colors.partition_point(|c| c.u <= u);
            let (a, b) = (&colors[idx - 1], &colors[idx]);
            if b.u == a.u {
                return Some(b.rgb());
            }
            let t = (u - a.u) / (b.u - a.u);
            Some([
                a.r + (b.r - a.r) * t,
                a.g + (b.g - a.g) * t,
                a.b + (b.b - a.b) * t,
            ])
        }
    }
}

/// CIE relative luminance of an sRGB-encoded color.
pub fn luminance(srgb: [f64; 3]) -> f64 {
    let l = linearize(srgb);
    0.2126 * l[0] + 0.7152 * l[1] + 0.0722 * l[2]
}

/// Scale a color toward white or black (in linear space) until its luminance
/// equals `target`. Output luminance matches the target to within 1e-6.
pub fn with_target_luminance(srgb: [f64; 3], target: f64) -> [f64; 3] {
    let lin = linearize(srgb);
    let y = 0.2126 * lin[0] + 0.7152 * lin[1] + 0.0722 * lin[2];
    let target = target.clamp(0.0, 1.0);
    let out_lin = if target >= y {
        let denom = 1.0 - y;
        let t = if denom > 1e-12 {
            (target - y) / denom
        } else {
            1.0
        };
        [
            lin[0] + t * (1.0 - lin[0]),
            lin[1] + t * (1.0 - lin[1]),
            lin[2] + t * (1.0 - lin[2]),
        ]
    } else {
        let s = if y > 1e-12 { target / y } else { 0.0 };
        [lin[0] * s, lin[1] * s, lin[2] * s]
    };
    [
        linear_to_srgb(out_lin[0]),
        linear_to_srgb(out_lin[1]),
        linear_to_srgb(out_lin[2]),
    ]
}

/// Modified color for a base color at a color-amplitude stimulus value (adu).
/// Dark bases brighten to the mapped luminance, light bases darken to its
/// mirror about 50%.
pub fn modulate_luminance(
    base: [f64; 3],
    amplitude_adu: f64,
    model: &PerceptualModel,
) -> Result<[f64; 3]> {
    let t = model.stimulus(Variable::ColorAmpl, amplitude_adu)?;
    Ok(apply_amplitude_target(base, t))
}

fn apply_amplitude_target(base: [f64; 3], target_lum: f64) -> [f64; 3] {
    let y = luminance(base);
    let target = if y <= 0.5 { target_lum } else { 1.0 - target_lum };
    with_target_luminance(base, target)
}

/// Which side(s) of a contour receive the color wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSide {
    /// Only the icon's interior side (closed contours; open ones fall back
    /// to both sides and rely on background masking).
    Inner,
    Both,
}

/// Period and target luminance of one color wave.
#[derive(Debug, Clone, Copy)]
pub struct ColorWaveSpec {
    pub period_length: f64,
    pub amplitude_luminance: f64,
    pub side: ColorSide,
}

/// Insert the color-interval structure of a luminance wave along the curve.
/// Every second interval carries the modified color; intervals whose base
/// color matches `background` stay untouched.
pub fn place_color_intervals(
    curve: &BSplineCurve,
    spec: &ColorWaveSpec,
    background: [f64; 3],
) -> Result<Modulated<BSplineCurve>> {
    let table = ArcLengthTable::build(curve, 64);
    let total = table.total_length();
    if total < 2.0 * spec.period_length {
        return Ok(Modulated::Skipped(format!(
            "arc length {total:.1} shorter than two color periods of {:.1}",
            spec.period_length
        )));
    }
    let m = (total / spec.period_length).floor() as usize;
    let realized = total / m as f64;

    let inner_is_left = outward_sign(curve) < 0.0;
    let sides: Vec<bool> = match spec.side {
        ColorSide::Both => vec![true, false],
        ColorSide::Inner if curve.closed => vec![inner_is_left],
        ColorSide::Inner => vec![true, false],
    };

    // boundary parameters: ub[0] and ub[m] are the domain ends (the seam of a
    // closed contour), interior boundaries sit at whole realized periods
    let (lo, hi) = curve.domain();
    let mut ub = Vec::with_capacity(m + 1);
    for b in 0..=m {
        let u = if b == 0 {
            lo
        } else if b == m {
            hi
        } else {
            table.u_at_length(realized * b as f64)
        };
        ub.push(u);
    }

    let interval_of = |u: f64| -> usize {
        let s = table.length_at(u);
        ((s / realized).floor() as usize).min(m - 1)
    };
    let modified_interval = |k: usize, ramp: &[ColorPoint]| -> bool {
        if k % 2 == 0 {
            return false;
        }
        // background masking: sample the base color mid-interval
        let mid = table.u_at_length(realized * (k as f64 + 0.5));
        match ramp_color(ramp, mid) {
            Some(c) => c
                .iter()
                .zip(background.iter())
                .any(|(a, b)| (a - b).abs() > 1.0 / 255.0),
            None => false,
        }
    };

    let mut out = curve.clone();
    for left in sides {
        let ramp = if left {
            curve.colors_left.clone()
        } else {
            curve.colors_right.clone()
        };
        if ramp.is_empty() {
            continue;
        }
        let color_at = |k: usize, u: f64, active: &dyn Fn(usize) -> bool| -> [f64; 3] {
            let base = ramp_color(&ramp, u).unwrap();
            if active(k) {
                apply_amplitude_target(base, spec.amplitude_luminance)
            } else {
                base
            }
        };
        let active = |k: usize| modified_interval(k, &ramp);

        let mut pts: Vec<ColorPoint> = Vec::new();
        // interval-colored copies of the original color points
        for cp in &ramp {
            let k = interval_of(cp.u);
            pts.push(ColorPoint::with_rgb(color_at(k, cp.u, &active), cp.u));
        }
        // boundary pairs (hard transitions)
        let boundaries: Vec<usize> = if curve.closed {
            (0..m).collect()
        } else {
            (1..m).collect()
        };
        for b in boundaries {
            let (u_prev, u_here, u_next) = if b == 0 {
                (ub[m - 1], lo, ub[1]) // seam: split across the domain ends
            } else {
                (ub[b - 1], ub[b], ub[b + 1])
            };
            let k_before = (b + m - 1) % m;
            let k_after = b % m;
            if b == 0 {
                let d_end = 0.005 * (hi - u_prev);
                let d_start = 0.005 * (u_next - lo);
                pts.push(ColorPoint::with_rgb(
                    color_at(k_before, hi - d_end, &active),
                    hi - d_end,
                ));
                pts.push(ColorPoint::with_rgb(
                    color_at(k_after, lo + d_start, &active),
                    lo + d_start,
                ));
            } else {
                let d_before = 0.005 * (u_here - u_prev);
                let d_after = 0.005 * (u_next - u_here);
                pts.push(ColorPoint::with_rgb(
                    color_at(k_before, u_here - d_before, &active),
                    u_here - d_before,
                ));
                pts.push(ColorPoint::with_rgb(
                    color_at(k_after, u_here + d_after, &active),
                    u_here + d_after,
                ));
            }
        }
        pts.sort_by(|a, b| a.u.partial_cmp(&b.u).unwrap());
        pts.dedup_by(|a, b| a.u == b.u);
        if left {
            out.colors_left = pts;
        } else {
            out.colors_right = pts;
        }
    }
    Ok(Modulated::Yes(out))
}

// ---------------------------------------------------------------------------
// colormaps

/// Named sequential colormap defined by evenly spaced sRGB anchors.
#[derive(Debug, Clone)]
pub struct Colormap {
    pub name: String,
    pub anchors: Vec<[f64; 3]>,
}

impl Colormap {
    pub fn new(name: impl Into<String>, anchors: Vec<[f64; 3]>) -> Self {
        Colormap {
            name: name.into(),
            anchors,
        }
    }

    /// Piecewise-linear evaluation at `t` in [0, 1].
    pub fn eval(&self, t: f64) -> [f64; 3] {
        let n = self.anchors.len();
        assert!(n >= 1);
        if n == 1 {
            return self.anchors[0];
        }
        let t = t.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (t.floor() as usize).min(n - 2);
        let f = t - i as f64;
        let (a, b) = (self.anchors[i], self.anchors[i + 1]);
        [
            a[0] + (b[0] - a[0]) * f,
            a[1] + (b[1] - a[1]) * f,
            a[2] + (b[2] - a[2]) * f,
        ]
    }

    pub fn builtin(name: &str) -> Option<Colormap> {
        let anchors: Vec<[f64; 3]> = match name {
            "viridis" => vec![
                [0.267, 0.005, 0.329],
                [0.229, 0.322, 0.546],
                [0.128, 0.567, 0.551],
                [0.369, 0.789, 0.383],
                [0.993, 0.906, 0.144],
            ],
            "magma" => vec![
                [0.001, 0.000, 0.014],
                [0.445, 0.122, 0.507],
                [0.796, 0.280, 0.469],
                [0.987, 0.625, 0.427],
                [0.987, 0.991, 0.750],
            ],
            "blues" => vec![
                [0.969, 0.984, 1.000],
                [0.417, 0.681, 0.838],
                [0.031, 0.188, 0.420],
            ],
            "grays" => vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]],
            _ => return None,
        };
        Some(Colormap::new(name, anchors))
    }

    /// Load additional maps from a JSON registry file:
    /// `{"colormaps": [{"name": "...", "anchors": [[r,g,b], ...]}]}`.
    pub fn load_registry(path: impl AsRef<Path>) -> Result<Vec<Colormap>> {
        #[derive(Deserialize)]
        struct File {
            colormaps: Vec<Entry>,
        }
        #[derive(Deserialize)]
        struct Entry {
            name: String,
            anchors: Vec<[f64; 3]>,
        }
        let text = std::fs::read_to_string(path)?;
        let file: File = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        let mut out = Vec::new();
        for e in file.colormaps {
            if e.anchors.is_empty() {
                return Err(Error::validation(format!(
                    "colormap {} has no anchors",
                    e.name
                )));
            }
            out.push(Colormap::new(e.name, e.anchors));
        }
        Ok(out)
    }

    /// Resolve by name against the built-ins plus an optional registry file.
    pub fn resolve(name: &str, registry: Option<&Path>) -> Result<Colormap> {
        if let Some(path) = registry {
            if let Some(cm) = Colormap::load_registry(path)?
                .into_iter()
                .find(|c| c.name == name)
            {
                return Ok(cm);
            }
        }
        Colormap::builtin(name)
            .ok_or_else(|| Error::validation(format!("unknown colormap \"{name}\"")))
    }
}

// ---------------------------------------------------------------------------
// margin barriers

/// Outcome of margin construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginOutcome {
    Unchanged,
    /// Number of barrier loops added.
    Added(usize),
}

/// Segment the icon into contour and inner region by inserting closed
/// diffusion barriers along the interior distance isoline at `width`.
/// The barrier's inner side is seeded with the icon's own color there, so a
/// finite margin renders identically inside until an inner color is set.
pub fn build_margin_barrier(
    dci: &DiffusionCurveImage,
    width: MarginWidth,
) -> Result<(DiffusionCurveImage, MarginOutcome)> {
    let MarginWidth::Finite(width) = width else {
        return Ok((dci.clone(), MarginOutcome::Unchanged));
    };
    if !dci.curves.iter().any(|c| c.closed && !c.barrier) {
        return Err(Error::validation(
            "margin requires at least one closed contour",
        ));
    }

    let w = dci.width.round().max(2.0) as usize;
    let h = dci.height.round().max(2.0) as usize;
    let field = DistanceField::build(&dci.curves, w, h)?;
    let inside = interior_mask(dci, w, h);

    // signed interior distance on grid nodes
    let mut f = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = field.distance_at(x, y);
            f[y * w + x] = if inside[y * w + x] { d } else { -d };
        }
    }

    let loops = marching_squares(&f, w, h, width);
    let loops: Vec<Vec<Point>> = loops
        .into_iter()
        .filter(|l| l.len() >= 8 && crate::geom::polyline_length(l) > 4.0)
        .collect();
    if loops.is_empty() {
        log::warn!(
            "margin width {width} exceeds the maximal interior distance; icon left unchanged"
        );
        return Ok((dci.clone(), MarginOutcome::Unchanged));
    }

    let mut out = dci.clone();
    let added = loops.len();
    for loop_pts in loops {
        let spline = fit_closed_loop(&loop_pts, 0.5)?;
        let mut barrier = bspline_to_bezier(&spline)?;
        barrier.closed = true;
        barrier.barrier = true;

        // which side of the loop faces the enclosed inner region
        let probe_u = barrier.param_max() * 0.25;
        let p = barrier.eval(probe_u);
        let n = rot90(barrier.deriv(probe_u).normalized());
        let left_inside = point_in_polygon(p + n * 0.75, &loop_pts);
        barrier.barrier_side = if left_inside {
            BarrierSide::Left
        } else {
            BarrierSide::Right
        };

        // seed the inner side with the icon's color sampled from the nearest
        // original contour
        let max_u = barrier.param_max();
        let mut colors = Vec::new();
        for i in 0..8 {
            let u = max_u * i as f64 / 8.0;
            let pos = barrier.eval(u);
            let rgb = sample_icon_color(dci, &field, pos);
            colors.push(ColorPoint::with_rgb(rgb, u));
        }
        colors.push(ColorPoint::with_rgb(colors[0].rgb(), max_u));
        match barrier.barrier_side {
            BarrierSide::Left => barrier.colors_left = colors,
            BarrierSide::Right => barrier.colors_right = colors,
            BarrierSide::Both => unreachable!(),
        }
        out.curves.push(barrier);
    }
    Ok((out, MarginOutcome::Added(added)))
}

/// Color of the icon at `pos`, taken from the side of the nearest contour
/// that faces `pos`.
fn sample_icon_color(dci: &DiffusionCurveImage, field: &DistanceField, pos: Point) -> [f64; 3] {
    let s = field.nearest_sample(pos);
    let curve = &dci.curves[s.curve];
    let t = curve.deriv(s.u).normalized();
    let toward = pos - s.pos;
    let left = rot90(t).dot(toward) >= 0.0;
    let ramp = if left {
        &curve.colors_left
    } else {
        &curve.colors_right
    };
    ramp_color(ramp, s.u)
        .or_else(|| ramp_color(if left { &curve.colors_right } else { &curve.colors_left }, s.u))
        .unwrap_or([0.0, 0.0, 0.0])
}

/// Set the inner-region color of a margin-segmented icon from a normalized
/// data value through a sequential colormap. Errors when no barrier is
/// present (infinite margin).
pub fn set_inner_color(
    dci: &DiffusionCurveImage,
    value: f64,
    colormap: &Colormap,
) -> Result<DiffusionCurveImage> {
    set_inner_color_rgb(dci, colormap.eval(value.clamp(0.0, 1.0)))
}

/// Set the inner-region color directly.
pub fn set_inner_color_rgb(dci: &DiffusionCurveImage, rgb: [f64; 3]) -> Result<DiffusionCurveImage> {
    let mut out = dci.clone();
    let mut found = false;
    for c in &mut out.curves {
        if !c.barrier {
            continue;
        }
        found = true;
        let max_u = c.param_max();
        let pts = vec![
            ColorPoint::with_rgb(rgb, 0.0),
            ColorPoint::with_rgb(rgb, max_u),
        ];
        match c.barrier_side {
            BarrierSide::Left => c.colors_left = pts,
            BarrierSide::Right => c.colors_right = pts,
            BarrierSide::Both => {
                c.colors_left = pts.clone();
                c.colors_right = pts;
            }
        }
    }
    if !found {
        return Err(Error::validation(
            "inner color requires a finite margin (no barrier present)",
        ));
    }
    Ok(out)
}

/// Even-odd interior mask over grid nodes at integer coordinates, from the
/// closed non-barrier contours.
fn interior_mask(dci: &DiffusionCurveImage, w: usize, h: usize) -> Vec<bool> {
    let polys: Vec<Vec<Point>> = dci
        .curves
        .iter()
        .filter(|c| c.closed && !c.barrier)
        .map(|c| c.sample_polyline(0.5).into_iter().map(|(_, p)| p).collect())
        .collect();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        let yf = y as f64;
        let mut crossings: Vec<f64> = Vec::new();
        for poly in &polys {
            let n = poly.len();
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                if (a.y > yf) != (b.y > yf) {
                    crossings.push(a.x + (yf - a.y) / (b.y - a.y) * (b.x - a.x));
                }
            }
        }
        crossings.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let mut inside = false;
        let mut ci = 0;
        for x in 0..w {
            let xf = x as f64;
            while ci < crossings.len() && crossings[ci] <= xf {
                inside = !inside;
                ci += 1;
            }
            mask[y * w + x] = inside;
        }
    }
    mask
}

/// Extract the closed isolines of `f` (sampled on integer grid nodes) at
/// `level` and chain them into loops.
fn marching_squares(f: &[f64], w: usize, h: usize, level: f64) -> Vec<Vec<Point>> {
    let val = |x: usize, y: usize| f[y * w + x];
    let lerp_on = |a: f64, b: f64| (level - a) / (b - a);

    let mut segments: Vec<(Point, Point)> = Vec::new();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let f00 = val(x, y);
            let f10 = val(x + 1, y);
            let f11 = val(x + 1, y + 1);
            let f01 = val(x, y + 1);
            let above = |v: f64| v > level;
            let idx = (above(f00) as usize)
                | (above(f10) as usize) << 1
                | (above(f11) as usize) << 2
                | (above(f01) as usize) << 3;
            if idx == 0 || idx == 15 {
                continue;
            }
            let xf = x as f64;
            let yf = y as f64;
            let top = Point {
                x: xf + lerp_on(f00, f10),
                y: yf,
            };
            let right = Point {
                x: xf + 1.0,
                y: yf + lerp_on(f10, f11),
            };
            let bottom = Point {
                x: xf + lerp_on(f01, f11),
                y: yf + 1.0,
            };
            let left = Point {
                x: xf,
                y: yf + lerp_on(f00, f01),
            };
            match idx {
                1 | 14 => segments.push((left, top)),
                2 | 13 => segments.push((top, right)),
                4 | 11 => segments.push((right, bottom)),
                8 | 7 => segments.push((bottom, left)),
                3 | 12 => segments.push((left, right)),
                6 | 9 => segments.push((top, bottom)),
                5 | 10 => {
                    // saddle: disambiguate with the cell-center average
                    let center = (f00 + f10 + f11 + f01) / 4.0;
                    if (center > level) == (idx == 5) {
                        segments.push((left, top));
                        segments.push((right, bottom));
                    } else {
                        segments.push((top, right));
                        segments.push((bottom, left));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    // chain segments into loops by shared endpoints
    use std::collections::HashMap;
    let key = |p: Point| -> (i64, i64) {
        ((p.x * 1024.0).round() as i64, (p.y * 1024.0).round() as i64)
    };
    let mut adj: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        adj.entry(key(s.0)).or_default().push(i);
        adj.entry(key(s.1)).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut pts = vec![segments[start].0, segments[start].1];
        loop {
            let tail = *pts.last().unwrap();
            let Some(list) = adj.get(&key(tail)) else {
                break;
            };
            let next = list.iter().copied().find(|&i| !used[i]);
            let Some(i) = next else { break };
            used[i] = true;
            let (a, b) = segments[i];
            let nxt = if key(a) == key(tail) { b } else { a };
            pts.push(nxt);
            if key(nxt) == key(pts[0]) {
                break;
            }
        }
        if pts.len() >= 4 && key(pts[0]) == key(*pts.last().unwrap()) {
            pts.pop();
            loops.push(pts);
        }
    }
    loops
}

/// Least-squares fit of a closed polyline by a closed clamped cubic B-spline
/// with the seam pair identified. Retries with more knots until the maximum
/// deviation at the data points is below `tol`.
fn fit_closed_loop(points: &[Point], tol: f64) -> Result<BSplineCurve> {
    let total = crate::geom::polyline_length(points) + points[points.len() - 1].dist(points[0]);
    let mut spans = ((total / 8.0).round() as usize).clamp(8, 200);

    for _attempt in 0..4 {
        let interior: Vec<f64> = (1..spans).map(|i| i as f64 / spans as f64).collect();
        let knots = clamped_knots(0.0, &interior, 1.0);
        let n = knots.len() - 4;
        let mut curve = BSplineCurve::new(vec![Point::default(); n], knots);
        curve.closed = true;

        // data: closed polyline with the first point repeated at t=1
        let mut data = points.to_vec();
        data.push(points[0]);
        let mut s_acc = 0.0;
        let mut params = Vec::with_capacity(data.len());
        params.push(0.0);
        for i in 1..data.len() {
            s_acc += data[i - 1].dist(data[i]);
            params.push((s_acc / total).min(1.0));
        }

        let basis = BasisMatrix::from_params(&curve, &params, true);
        let cols = basis.cols;
        let dense = basis.dense();
        let rows = basis.rows();
        let mut ata = vec![0.0f64; cols * cols];
        let mut atb_x = vec![0.0f64; cols];
        let mut atb_y = vec![0.0f64; cols];
        for r in 0..rows {
            for i in 0..cols {
                let wi = dense[r * cols + i];
                if wi == 0.0 {
                    continue;
                }
                atb_x[i] += wi * data[r].x;
                atb_y[i] += wi * data[r].y;
                for j in 0..cols {
                    let wj = dense[r * cols + j];
                    if wj != 0.0 {
                        ata[i * cols + j] += wi * wj;
                    }
                }
            }
        }
        let ridge = 1e-9 * (1.0 + total);
        for i in 0..cols {
            ata[i * cols + i] += ridge;
        }
        if !solve_spd(&mut ata, cols, &mut atb_x, &mut atb_y) {
            spans *= 2;
            continue;
        }
        let mut de_boor: Vec<Point> = (0..cols)
            .map(|i| Point {
                x: atb_x[i],
                y: atb_y[i],
            })
            .collect();
        de_boor.push(de_boor[0]);
        curve.de_boor = de_boor;

        let max_dev = params
            .iter()
            .zip(data.iter())
            .map(|(&u, p)| curve.point_at(u).dist(*p))
            .fold(0.0, f64::max);
        if max_dev <= tol || spans >= 400 {
            return Ok(curve);
        }
        spans = (spans * 2).min(400);
    }
    Err(Error::numeric("isoline fit did not reach tolerance"))
}

/// Cholesky solve for two right-hand sides; false when not positive definite.
fn solve_spd(a: &mut [f64], n: usize, bx: &mut [f64], by: &mut [f64]) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    for b in [bx, by] {
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= a[i * n + k] * b[k];
            }
            b[i] = sum / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..n {
                sum -= a[k * n + i] * b[k];
            }
            b[i] = sum / a[i * n + i];
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::BezierCurve;
    use crate::geom::pt;
    use crate::spline::clamped_knots;

    fn straight_colored(len: f64) -> BSplineCurve {
        let mut c = BSplineCurve::new(
            vec![
                pt(0.0, 0.0),
                pt(len / 3.0, 0.0),
                pt(2.0 * len / 3.0, 0.0),
                pt(len, 0.0),
            ],
            clamped_knots(0.0, &[], 1.0),
        );
        c.colors_left = vec![
            ColorPoint::with_rgb([0.0, 0.0, 0.0], 0.0),
            ColorPoint::with_rgb([0.0, 0.0, 0.0], 1.0),
        ];
        c.colors_right = vec![
            ColorPoint::with_rgb([1.0, 1.0, 1.0], 0.0),
            ColorPoint::with_rgb([1.0, 1.0, 1.0], 1.0),
        ];
        c
    }

    #[test]
    fn interval_boundaries_on_straight_segment() {
        let c = straight_colored(40.0);
        let spec = ColorWaveSpec {
            period_length: 10.0,
            amplitude_luminance: 0.85,
            side: ColorSide::Both,
        };
        let out = place_color_intervals(&c, &spec, [1.0; 3])
            .unwrap()
            .unwrap_modulated();
        // boundaries at arc 10, 20, 30 -> parameters 0.25, 0.5, 0.75; two
        // points per boundary
        for side in [&out.colors_left, &out.colors_right] {
            for b in [0.25f64, 0.5, 0.75] {
                let close: Vec<&ColorPoint> = side
                    .iter()
                    .filter(|cp| (cp.u - b).abs() < 0.005)
                    .collect();
                assert_eq!(close.len(), 2, "boundary at {b} needs a point pair");
                let arc_err = (close[0].u - b).abs().max((close[1].u - b).abs()) * 40.0;
                assert!(arc_err < 0.2);
            }
        }
    }

    #[test]
    fn too_short_for_two_periods_is_skipped() {
        let c = straight_colored(15.0);
        let spec = ColorWaveSpec {
            period_length: 10.0,
            amplitude_luminance: 0.85,
            side: ColorSide::Both,
        };
        assert!(place_color_intervals(&c, &spec, [1.0; 3])
            .unwrap()
            .is_skipped());
    }

    #[test]
    fn unmodified_intervals_keep_original_color() {
        let c = straight_colored(40.0);
        let spec = ColorWaveSpec {
            period_length: 10.0,
            amplitude_luminance: 0.85,
            side: ColorSide::Both,
        };
        let out = place_color_intervals(&c, &spec, [1.0; 3])
            .unwrap()
            .unwrap_modulated();
        // intervals 0 and 2 are unmodified: sample inside them
        for u in [0.1, 0.6] {
            let got = ramp_color(&out.colors_left, u).unwrap();
            for ch in got {
                assert!(ch.abs() < 1e-12, "expected original black at u={u}");
            }
        }
        // interval 1 is modified on the black side
        let got = ramp_color(&out.colors_left, 0.375).unwrap();
        assert!((luminance(got) - 0.85).abs() < 1e-6);
        // the white (background) side is masked out everywhere
        for u in [0.1, 0.375, 0.6, 0.9] {
            let got = ramp_color(&out.colors_right, u).unwrap();
            assert!(got.iter().all(|&ch| (ch - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn alternation_never_modifies_adjacent_intervals() {
        let c = straight_colored(80.0);
        let spec = ColorWaveSpec {
            period_length: 10.0,
            amplitude_luminance: 0.7,
            side: ColorSide::Both,
        };
        let out = place_color_intervals(&c, &spec, [1.0; 3])
            .unwrap()
            .unwrap_modulated();
        let mut states = Vec::new();
        for k in 0..8 {
            let u = (k as f64 + 0.5) / 8.0;
            let y = luminance(ramp_color(&out.colors_left, u).unwrap());
            states.push(y > 0.3);
        }
        for w in states.windows(2) {
            assert!(!(w[0] && w[1]), "adjacent intervals both modified");
        }
        assert!(states.iter().any(|&s| s));
    }

    #[test]
    fn luminance_targets_black_base() {
        for (adu_target, expect) in [(0.85, 0.85), (0.425, 0.425), (0.6375, 0.6375)] {
            let out = apply_amplitude_target([0.0; 3], adu_target);
            assert!((luminance(out) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn luminance_mirrors_for_light_base() {
        let out = apply_amplitude_target([1.0; 3], 0.85);
        assert!((luminance(out) - 0.15).abs() < 1e-6);
    }

    #[test]
    fn luminance_is_monotone_in_level() {
        let mut prev_dark = -1.0;
        let mut prev_light = 2.0;
        for i in 0..=10 {
            let t = 0.425 + (0.85 - 0.425) * i as f64 / 10.0;
            let yd = luminance(apply_amplitude_target([0.05, 0.02, 0.09], t));
            let yl = luminance(apply_amplitude_target([0.95, 0.98, 0.92], t));
            assert!(yd > prev_dark, "dark base must brighten with level");
            assert!(yl < prev_light, "light base must darken with level");
            prev_dark = yd;
            prev_light = yl;
        }
    }

    #[test]
    fn colormap_midpoint_interpolates() {
        let cm = Colormap::new(
            "test",
            vec![[0.0, 0.0, 0.0], [0.5, 0.4, 0.3], [1.0, 1.0, 1.0]],
        );
        assert_eq!(cm.eval(0.0), [0.0, 0.0, 0.0]);
        assert_eq!(cm.eval(1.0), [1.0, 1.0, 1.0]);
        let mid = cm.eval(0.5);
        assert!((mid[0] - 0.5).abs() < 1e-12 && (mid[1] - 0.4).abs() < 1e-12);
        // quarter point: halfway between anchor 0 and anchor 1
        let q = cm.eval(0.25);
        assert!((q[0] - 0.25).abs() < 1e-12);
    }

    fn disk_icon(r: f64, canvas: f64) -> DiffusionCurveImage {
        let c = canvas / 2.0;
        let k = 0.552_284_749_830_793_6 * r;
        let pts = vec![
            pt(c + r, c),
            pt(c + r, c + k),
            pt(c + k, c + r),
            pt(c, c + r),
            pt(c - k, c + r),
            pt(c - r, c + k),
            pt(c - r, c),
            pt(c - r, c - k),
            pt(c - k, c - r),
            pt(c, c - r),
            pt(c + k, c - r),
            pt(c + r, c - k),
            pt(c + r, c),
        ];
        let mut curve = BezierCurve::open(pts);
        curve.closed = true;
        curve.colors_left = vec![
            ColorPoint::with_rgb([0.0; 3], 0.0),
            ColorPoint::with_rgb([0.0; 3], 4.0),
        ];
        curve.colors_right = vec![
            ColorPoint::with_rgb([1.0; 3], 0.0),
            ColorPoint::with_rgb([1.0; 3], 4.0),
        ];
        DiffusionCurveImage {
            width: canvas,
            height: canvas,
            curves: vec![curve],
        }
    }

    #[test]
    fn margin_isoline_of_disk() {
        let dci = disk_icon(100.0, 256.0);
        let (out, outcome) = build_margin_barrier(&dci, MarginWidth::Finite(20.0)).unwrap();
        assert!(matches!(outcome, MarginOutcome::Added(1)));
        let barrier = out.curves.iter().find(|c| c.barrier).unwrap();
        let center = pt(128.0, 128.0);
        let mut dev_sum = 0.0;
        let n = 256;
        for i in 0..n {
            let u = barrier.param_max() * i as f64 / n as f64;
            let r = barrier.eval(u).dist(center);
            dev_sum += (r - 80.0).abs();
        }
        let mean_dev = dev_sum / n as f64;
        assert!(mean_dev < 1.0, "mean radial deviation {mean_dev}");
        // barrier carries the icon color (black) on its inner side
        let inner = match barrier.barrier_side {
            BarrierSide::Left => &barrier.colors_left,
            BarrierSide::Right => &barrier.colors_right,
            BarrierSide::Both => panic!("margin barriers are one-sided"),
        };
        assert!(!inner.is_empty());
        assert!(inner.iter().all(|c| c.r < 0.02));
    }

    #[test]
    fn infinite_margin_is_identity() {
        let dci = disk_icon(100.0, 256.0);
        let (out, outcome) = build_margin_barrier(&dci, MarginWidth::Infinite).unwrap();
        assert_eq!(outcome, MarginOutcome::Unchanged);
        assert_eq!(out, dci);
    }

    #[test]
    fn oversized_margin_warns_and_leaves_unchanged() {
        let dci = disk_icon(100.0, 256.0);
        let (out, outcome) = build_margin_barrier(&dci, MarginWidth::Finite(150.0)).unwrap();
        assert_eq!(outcome, MarginOutcome::Unchanged);
        assert_eq!(out.curves.len(), dci.curves.len());
    }

    #[test]
    fn inner_color_needs_barrier() {
        let dci = disk_icon(100.0, 256.0);
        let cm = Colormap::builtin("viridis").unwrap();
        assert!(set_inner_color(&dci, 0.5, &cm).is_err());
        let (with_margin, _) = build_margin_barrier(&dci, MarginWidth::Finite(20.0)).unwrap();
        let colored = set_inner_color(&with_margin, 0.0, &cm).unwrap();
        let barrier = colored.curves.iter().find(|c| c.barrier).unwrap();
        let pts = match barrier.barrier_side {
            BarrierSide::Left => &barrier.colors_left,
            _ => &barrier.colors_right,
        };
        let lowest = cm.eval(0.0);
        assert!(pts.iter().all(|c| (c.r - lowest[0]).abs() < 1e-12));
    }
}
