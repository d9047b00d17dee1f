//! Wave-like contour modulation.
//!
//! A contour is first reparametrized so its knot points sit at equidistant
//! arc-length positions matching the requested period, then designated knot
//! points are translated along the contour normal in alternating directions.
//! The translation is realized through the minimum-norm constraint solve, so
//! the spline interpolates the displaced knot points while the remaining
//! control points move as little as possible.
//!
//! Amplitudes are clamped against a distance field of the original curves:
//! when a translated point would come closer to a foreign curve point than to
//! its own anchor, the translation stops short of the skeleton point between
//! the two curves, minus a pixel margin.

use crate::dci::WaveShape;
use crate::dist::DistanceField;
use crate::error::Result;
use crate::geom::{rot90, signed_area, Point};
use crate::spline::{
    clamped_knots, elspia_fit, insert_knot, solve_constraint_offsets, ArcLengthTable, BSplineCurve,
    BasisMatrix, FitConfig,
};

/// Shape, period length and amplitude of one geometric wave, in canvas units.
#[derive(Debug, Clone, Copy)]
pub struct WaveSpec {
    pub shape: WaveShape,
    pub period_length: f64,
    pub amplitude: f64,
}

/// Outcome of a per-curve modulation: curves too short for the requested
/// period are skipped and left unmodified.
#[derive(Debug, Clone)]
pub enum Modulated<T> {
    Yes(T),
    Skipped(String),
}

impl<T> Modulated<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Modulated<U> {
        match self {
            Modulated::Yes(t) => Modulated::Yes(f(t)),
            Modulated::Skipped(s) => Modulated::Skipped(s),
        }
    }

    pub fn unwrap_modulated(self) -> T {
        match self {
            Modulated::Yes(t) => t,
            Modulated::Skipped(s) => panic!("curve was skipped: {s}"),
        }
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self, Modulated::Skipped(_))
    }
}

/// Knot points carried per period by each shape. The sinusoidal wave needs
/// two peak points plus two free intermediate points; the piecewise-straight
/// shapes place one corner per half period.
pub fn knot_points_per_period(shape: WaveShape) -> usize {
    match shape {
        WaveShape::Sinusoidal => 4,
        WaveShape::Rectangular | WaveShape::Sawtooth => 2,
    }
}

/// Samples closer than this to the clamp anchor count as the anchor itself
/// rather than as an obstruction. The anchor lies on a sampled curve only up
/// to the refit tolerance plus the sampling stride, both well below 1.
pub const CLAMP_ANCHOR_RADIUS: f64 = 1.0;

const CLAMP_MAX_DEPTH: usize = 8;

/// Sign such that `outward(u) = rot90(tangent(u)) * sign` points out of a
/// closed contour. Open curves use the left normal as-is.
pub fn outward_sign(curve: &BSplineCurve) -> f64 {
    if !curve.closed {
        return 1.0;
    }
    let poly: Vec<Point> = curve.sample_polyline(256).into_iter().map(|(_, p)| p).collect();
    if signed_area(&poly) > 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Outward unit normal at `u`.
pub fn normal_at(curve: &BSplineCurve, u: f64, sign: f64) -> Point {
    rot90(curve.tangent_at(u)).normalized() * sign
}

/// Largest usable translation along `dir` (unit) from anchor `k`, starting
/// from amplitude `a`. When the translated point gets closer to a foreign
/// curve point `n` than to `k`, the amplitude is cut to the skeleton distance
/// `0.5 |n-k|^2 / <dir, n-k>` minus `epsilon`, re-checked recursively.
/// Never negative, never above `a`.
pub fn clamp_amplitude(
    k: Point,
    dir: Point,
    a: f64,
    field: &DistanceField,
    epsilon: f64,
) -> f64 {
    let mut cur = a.max(0.0);
    for _ in 0..CLAMP_MAX_DEPTH {
        if cur <= 0.0 {
            return 0.0;
        }
        let p = k + dir * cur;
        let Some(n) = field.nearest_obstruction(p, k, CLAMP_ANCHOR_RADIUS) else {
            return cur;
        };
        if n.pos.dist(p) >= cur - 1e-9 {
            return cur; // the anchor itself is still nearest
        }
        let chord = n.pos - k;
        let along = dir.dot(chord);
        if along <= 0.05 * chord.norm() {
            return cur; // no obstruction along the translation direction
        }
        let skeleton = 0.5 * chord.norm2() / along;
        let next = cur.min((skeleton - epsilon).max(0.0));
        if next >= cur - 1e-12 {
            return cur;
        }
        cur = next;
    }
    cur
}

struct Constraint {
    u: f64,
    offset: Point,
}

fn apply_constraints(curve: &BSplineCurve, constraints: &[Constraint]) -> Result<BSplineCurve> {
    let n = curve.de_boor.len();
    let fold = curve.closed && curve.de_boor[0].dist(curve.de_boor[n - 1]) < 1e-9;
    let params: Vec<f64> = constraints.iter().map(|c| c.u).collect();
    let basis = BasisMatrix::from_params(curve, &params, fold);
    let dq: Vec<Point> = constraints.iter().map(|c| c.offset).collect();
    let sol = solve_constraint_offsets(&basis, &dq)?;
    let full = basis.expand_offsets(&sol.offsets);
    let mut out = curve.clone();
    for (p, off) in out.de_boor.iter_mut().zip(full.iter()) {
        *p += *off;
    }
    Ok(out)
}

/// Interior knot parameters in order, bracketed by the domain ends.
fn knot_point_params(curve: &BSplineCurve) -> Vec<f64> {
    curve.distinct_knots()
}

/// Reparametrize `curve` so its knot points lie at equidistant arc-length
/// positions for the given shape and period. The period count is the whole
/// number of periods fitting the contour; the remainder is absorbed by
/// uniformly stretching the realized period.
pub fn reparam_for_frequency(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    fit: &FitConfig,
) -> Result<Modulated<BSplineCurve>> {
    let table = ArcLengthTable::build(curve, 64);
    let total = table.total_length();
    if total < 2.0 * spec.period_length {
        return Ok(Modulated::Skipped(format!(
            "arc length {total:.1} shorter than two periods of {:.1}",
            spec.period_length
        )));
    }
    let periods = (total / spec.period_length).floor() as usize;
    let count = periods * knot_points_per_period(spec.shape);
    let spacing = total / count as f64;
    let (lo, hi) = curve.domain();

    let mut params = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let u = if j == 0 {
            lo
        } else if j == count {
            hi
        } else {
            table.u_at_length(spacing * j as f64)
        };
        params.push(u);
    }
    if params.windows(2).any(|w| w[1] - w[0] < 1e-9 * (hi - lo)) {
        return Ok(Modulated::Skipped(
            "degenerate knot spacing after arc-length inversion".into(),
        ));
    }

    let target = clamped_knots(lo, &params[1..count], hi);
    if target.len() < curve.knots.len() {
        // would require knot deletion: more control structure than the
        // requested frequency provides
        return Ok(Modulated::Skipped(format!(
            "curve has {} knots but the target frequency only provides {}",
            curve.knots.len(),
            target.len()
        )));
    }
    let fitted = elspia_fit(curve, &target, fit)?;
    if !fitted.converged {
        log::warn!(
            "arc-length refit not fully converged (error {:.3})",
            fitted.max_error
        );
    }
    Ok(Modulated::Yes(fitted.curve))
}

/// Translate the designated knot points of an already reparametrized curve
/// by the (clamped) amplitude along alternating normals. Intermediate knot
/// points of the sinusoidal shape stay unconstrained; the piecewise-straight
/// shapes get their corner knots raised to multiplicity 3 first, and for the
/// rectangular shape the plateau midpoints are obstruction-checked as well.
pub fn apply_amplitude(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
) -> Result<BSplineCurve> {
    match spec.shape {
        WaveShape::Sinusoidal => {
            let sign = outward_sign(curve);
            let params = knot_point_params(curve);
            let constraints = sinusoidal_constraints(curve, &params, spec, field, epsilon, sign);
            apply_constraints(curve, &constraints)
        }
        WaveShape::Sawtooth => sawtooth_displace(curve, spec, field, epsilon),
        WaveShape::Rectangular => rectangular_displace(curve, spec, field, epsilon),
    }
}

/// Full shape construction on a reparametrized curve: knot preparation,
/// amplitude displacement, and straight strips for the cornered shapes.
pub fn make_shape(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
) -> Result<BSplineCurve> {
    let mut out = apply_amplitude(curve, spec, field, epsilon)?;
    if matches!(spec.shape, WaveShape::Sawtooth | WaveShape::Rectangular) {
        straighten_strips(&mut out);
    }
    Ok(out)
}

/// Reparametrize and shape one contour in one go.
pub fn modulate_geometry(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
    fit: &FitConfig,
) -> Result<Modulated<BSplineCurve>> {
    match reparam_for_frequency(curve, spec, fit)? {
        Modulated::Skipped(s) => Ok(Modulated::Skipped(s)),
        Modulated::Yes(re) => Ok(Modulated::Yes(make_shape(&re, spec, field, epsilon)?)),
    }
}

fn sinusoidal_constraints(
    curve: &BSplineCurve,
    params: &[f64],
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
    sign: f64,
) -> Vec<Constraint> {
    let count = params.len() - 1;
    let mut cs = Vec::new();
    // contour ends stay put: the seam of a closed curve, both ends of an
    // open one (they may join other curves of the icon)
    cs.push(Constraint {
        u: params[0],
        offset: Point::default(),
    });
    if !curve.closed {
        cs.push(Constraint {
            u: params[count],
            offset: Point::default(),
        });
    }
    for (j, &u) in params.iter().enumerate().take(count).skip(1) {
        if j % 2 == 0 {
            continue; // intermediate knot point, not a modification constraint
        }
        let positive = ((j - 1) / 2) % 2 == 0;
        let k = curve.point_at(u);
        let n = normal_at(curve, u, sign);
        let dir = if positive { n } else { -n };
        let a = clamp_amplitude(k, dir, spec.amplitude, field, epsilon);
        cs.push(Constraint {
            u,
            offset: dir * a,
        });
    }
    cs
}

/// Raise the multiplicity of an interior knot value to 3, or insert it fresh.
fn ensure_triple(curve: &mut BSplineCurve, t: f64) -> Result<()> {
    let (lo, hi) = curve.domain();
    if t <= lo || t >= hi {
        return Ok(()); // clamped ends already interpolate
    }
    while curve.multiplicity(t) < 3 {
        *curve = insert_knot(curve, t)?;
    }
    Ok(())
}

fn sawtooth_displace(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
) -> Result<BSplineCurve> {
    let sign = outward_sign(curve);
    let params = knot_point_params(curve);
    let count = params.len() - 1;
    let mut work = curve.clone();
    for &t in &params[1..count] {
        ensure_triple(&mut work, t)?;
    }
    let mut cs = Vec::new();
    if work.closed {
        // every knot point is a corner; the seam is corner 0 (positive)
        for (j, &u) in params.iter().enumerate().take(count) {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            cs.push(corner_constraint(&work, u, s, spec, field, epsilon, sign));
        }
    } else {
        cs.push(Constraint {
            u: params[0],
            offset: Point::default(),
        });
        cs.push(Constraint {
            u: params[count],
            offset: Point::default(),
        });
        for (j, &u) in params.iter().enumerate().take(count).skip(1) {
            let s = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
            cs.push(corner_constraint(&work, u, s, spec, field, epsilon, sign));
        }
    }
    apply_constraints(&work, &cs)
}

fn corner_constraint(
    curve: &BSplineCurve,
    u: f64,
    s: f64,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
    sign: f64,
) -> Constraint {
    let k = curve.point_at(u);
    let dir = normal_at(curve, u, sign) * s;
    let a = clamp_amplitude(k, dir, spec.amplitude, field, epsilon);
    Constraint {
        u,
        offset: dir * a,
    }
}

/// Relative parametric offset of the paired rectangular corner knots.
const RECT_PAIR_OFFSET: f64 = 0.01;

fn rectangular_displace(
    curve: &BSplineCurve,
    spec: &WaveSpec,
    field: &DistanceField,
    epsilon: f64,
) -> Result<BSplineCurve> {
    let sign = outward_sign(curve);
    let params = knot_point_params(curve);
    let count = params.len() - 1;
    let closed = curve.closed;

    // plateau j spans (start_j, end_j) in parameter space; levels alternate
    let mut plateaus = Vec::with_capacity(count);
    for j in 0..count {
        let delta = RECT_PAIR_OFFSET * (params[j + 1] - params[j]);
        let start = params[j] + delta;
        let end = if j + 1 < count {
            params[j + 1]
        } else if closed {
            params[count]
        } else {
            params[count] - RECT_PAIR_OFFSET * (params[count] - params[count - 1])
        };
        let s = if j % 2 == 0 { 1.0 } else { -1.0 };
        plateaus.push((start, end, s));
    }

    let mut work = curve.clone();
    for &t in &params[1..count] {
        ensure_triple(&mut work, t)?;
    }
    for &(start, end, _) in &plateaus {
        ensure_triple(&mut work, start)?;
        ensure_triple(&mut work, end)?;
    }

    let mut cs = Vec::new();
    if !closed {
        cs.push(Constraint {
            u: params[0],
            offset: Point::default(),
        });
        cs.push(Constraint {
            u: params[count],
            offset: Point::default(),
        });
    }
    for &(start, end, s) in &plateaus {
        // the straight plateau's midpoint protrudes the most over a curved
        // base, so it is obstruction-checked along with both corners
        let mut level = spec.amplitude;
        for u in [start, end, (start + end) / 2.0] {
            let k = work.point_at(u);
            let dir = normal_at(&work, u, sign) * s;
            level = level.min(clamp_amplitude(k, dir, level, field, epsilon));
        }
        for u in [start, end] {
            // the seam of a closed contour appears once as a constraint row
            if closed && u >= params[count] {
                let dir = normal_at(&work, params[0], sign) * s;
                cs.push(Constraint {
                    u: params[0],
                    offset: dir * level,
                });
                continue;
            }
            let dir = normal_at(&work, u, sign) * s;
            cs.push(Constraint {
                u,
                offset: dir * level,
            });
        }
    }
    apply_constraints(&work, &cs)
}

/// With every interior knot at multiplicity 3 the de Boor points form
/// per-span Bezier quads; placing each span's inner two points on the chord
/// yields straight strips between corners.
fn straighten_strips(curve: &mut BSplineCurve) {
    let spans = curve.distinct_knots().len() - 1;
    if curve.de_boor.len() != 3 * spans + 1 {
        return; // not in full corner form; leave untouched
    }
    for s in 0..spans {
        let a = curve.de_boor[3 * s];
        let b = curve.de_boor[3 * s + 3];
        curve.de_boor[3 * s + 1] = a.lerp(b, 1.0 / 3.0);
        curve.de_boor[3 * s + 2] = a.lerp(b, 2.0 / 3.0);
    }
}
