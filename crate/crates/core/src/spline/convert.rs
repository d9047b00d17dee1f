//! Conversion between cubic Bezier splines and clamped cubic B-splines.
//!
//! Going to B-spline form, each knot interval is scaled so the end tangent
//! lengths of consecutive segments match in the global parameter. Joints whose
//! tangent directions deviate by less than `alpha` degrees are treated as C1:
//! they get a double knot and the shared control point is dropped, which
//! reduces the representation by one point per merged joint. All other joints
//! keep a triple knot and reproduce the input exactly. With `alpha = 0` the
//! conversion is exact everywhere.

use super::{clamped_knots, insert_knot, BSplineCurve, DEGREE};
use crate::dci::{BezierCurve, ColorPoint};
use crate::error::{Error, Result};

/// Convert a Bezier spline to a clamped cubic B-spline. `alpha` is the joint
/// merge threshold in degrees.
pub fn bezier_to_bspline(bez: &BezierCurve, alpha: f64) -> Result<BSplineCurve> {
    bez.validate(0).map_err(|e| match e {
        Error::Curve { msg, .. } => Error::Validation(msg),
        other => other,
    })?;
    let n_seg = bez.segments();
    let p = &bez.control_points;

    let mut de_boor = vec![p[0], p[1], p[2], p[3]];
    // joint parameter values; joints[i] is the start of segment i+1
    let mut joints: Vec<f64> = Vec::with_capacity(n_seg.max(1) - 1);
    let mut interior: Vec<f64> = Vec::new();
    let mut delta = 1.0;
    let mut t_last = 1.0;

    for i in 0..n_seg.saturating_sub(1) {
        let out_tan = p[3 * i + 3] - p[3 * i + 2];
        let in_tan = p[3 * i + 4] - p[3 * i + 3];
        if out_tan.norm() < 1e-12 || in_tan.norm() < 1e-12 {
            return Err(Error::DegenerateJoint { segment: i });
        }
        // scale the next interval so global-parameter tangent lengths agree
        delta *= in_tan.norm() / out_tan.norm();
        let cosang = (out_tan.dot(in_tan) / (out_tan.norm() * in_tan.norm())).clamp(-1.0, 1.0);
        let angle_deg = cosang.acos().to_degrees();

        joints.push(t_last);
        if angle_deg < alpha {
            // approximately C1: double knot, shared point dropped
            interior.extend_from_slice(&[t_last, t_last]);
            de_boor.pop();
        } else {
            // C0: triple knot, exact reproduction
            interior.extend_from_slice(&[t_last, t_last, t_last]);
        }
        de_boor.extend_from_slice(&[p[3 * i + 4], p[3 * i + 5], p[3 * i + 6]]);
        t_last += delta;
    }

    let knots = clamped_knots(0.0, &interior, t_last);

    // segment boundaries in the new parameter, for color remapping
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&joints);
    bounds.push(t_last);
    let remap = |u: f64| -> f64 {
        let l = (u.floor() as usize).min(n_seg - 1);
        let frac = u - l as f64;
        bounds[l] + frac * (bounds[l + 1] - bounds[l])
    };

    let curve = BSplineCurve {
        de_boor,
        knots,
        colors_left: bez
            .colors_left
            .iter()
            .map(|c| ColorPoint { u: remap(c.u), ..*c })
            .collect(),
        colors_right: bez
            .colors_right
            .iter()
            .map(|c| ColorPoint { u: remap(c.u), ..*c })
            .collect(),
        closed: bez.closed,
    };
    curve.validate()?;
    Ok(curve)
}

/// Convert back to Bezier form by raising every interior knot to multiplicity
/// 3; the de Boor points then are the Bezier control points. Geometrically
/// identical; color parameters are remapped per segment.
pub fn bspline_to_bezier(curve: &BSplineCurve) -> Result<BezierCurve> {
    curve.validate()?;
    let mut work = curve.clone();
    let (lo, hi) = work.domain();
    loop {
        let mut inserted = false;
        for t in work.distinct_knots() {
            if t > lo && t < hi {
                let m = work.multiplicity(t);
                if m < DEGREE {
                    work = insert_knot(&work, t)?;
                    inserted = true;
                    break;
                }
            }
        }
        if !inserted {
            break;
        }
    }

    let bounds = work.distinct_knots();
    let n_seg = bounds.len() - 1;
    debug_assert_eq!(work.de_boor.len(), 3 * n_seg + 1);

    let remap = |u: f64| -> f64 {
        let mut l = match bounds.binary_search_by(|b| b.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        l = l.min(n_seg - 1);
        let (a, b) = (bounds[l], bounds[l + 1]);
        l as f64 + if b > a { (u - a) / (b - a) } else { 0.0 }
    };

    Ok(BezierCurve {
        control_points: work.de_boor,
        colors_left: curve
            .colors_left
            .iter()
            .map(|c| ColorPoint { u: remap(c.u), ..*c })
            .collect(),
        colors_right: curve
            .colors_right
            .iter()
            .map(|c| ColorPoint { u: remap(c.u), ..*c })
            .collect(),
        closed: curve.closed,
        barrier: false,
        barrier_side: crate::dci::BarrierSide::Both,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{pt, Point};

    fn max_deviation(bez: &BezierCurve, bsp: &BSplineCurve, samples: usize) -> f64 {
        // compare as point sets via dense parameter scans on both sides
        let (lo, hi) = bsp.domain();
        let bez_pts: Vec<Point> = (0..=samples)
            .map(|i| bez.eval(bez.param_max() * i as f64 / samples as f64))
            .collect();
        (0..=samples)
            .map(|i| {
                let u = lo + (hi - lo) * i as f64 / samples as f64;
                let p = bsp.point_at(u);
                bez_pts
                    .iter()
                    .map(|q| q.dist(p))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_segment_is_verbatim() {
        let bez = BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 2.0),
            pt(2.0, -1.0),
            pt(3.0, 0.5),
        ]);
        let b = bezier_to_bspline(&bez, 3.5).unwrap();
        assert_eq!(b.de_boor, bez.control_points);
        assert_eq!(b.knots, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn c1_joint_merges_to_double_knot() {
        // collinear tangents with equal length across the joint
        let bez = BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 1.0),
            pt(2.0, 1.0),
            pt(3.0, 0.0),
            pt(4.0, -1.0),
            pt(5.0, -1.0),
            pt(6.0, 0.0),
        ]);
        let b = bezier_to_bspline(&bez, 3.5).unwrap();
        let t = b.distinct_knots()[1];
        assert_eq!(b.multiplicity(t), 2, "interior double knot");
        assert_eq!(b.de_boor.len(), 6);
        assert!(max_deviation(&bez, &b, 800) < 1e-9);
    }

    #[test]
    fn c0_joint_keeps_triple_knot() {
        // 90 degree corner
        let bez = BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 0.0),
            pt(2.0, 0.0),
            pt(3.0, 0.0),
            pt(3.0, 1.0),
            pt(3.0, 2.0),
            pt(3.0, 3.0),
        ]);
        let b = bezier_to_bspline(&bez, 3.5).unwrap();
        let t = b.distinct_knots()[1];
        assert_eq!(b.multiplicity(t), 3, "interior triple knot");
        assert_eq!(b.de_boor.len(), 7);
        assert!(max_deviation(&bez, &b, 1000) < 1e-9);
    }

    #[test]
    fn zero_tangent_joint_reports_segment() {
        let bez = BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 0.0),
            pt(3.0, 0.0),
            pt(3.0, 0.0),
            pt(3.0, 1.0),
            pt(3.0, 2.0),
            pt(3.0, 3.0),
        ]);
        assert!(matches!(
            bezier_to_bspline(&bez, 3.5),
            Err(Error::DegenerateJoint { segment: 0 })
        ));
    }

    #[test]
    fn round_trip_alpha_zero_is_exact() {
        let mut bez = BezierCurve::open(vec![
            pt(0.0, 0.0),
            pt(1.0, 2.0),
            pt(2.5, 2.0),
            pt(3.0, 0.0),
            pt(3.5, -2.0),
            pt(5.0, 1.0),
            pt(6.0, 1.5),
            pt(7.0, 2.0),
            pt(8.0, -1.0),
            pt(9.0, 0.0),
        ]);
        bez.colors_left = vec![
            ColorPoint::with_rgb([0.2, 0.4, 0.6], 0.5),
            ColorPoint::with_rgb([0.9, 0.1, 0.3], 2.5),
        ];
        let b = bezier_to_bspline(&bez, 0.0).unwrap();
        let back = bspline_to_bezier(&b).unwrap();
        assert_eq!(back.control_points.len(), bez.control_points.len());
        for i in 0..=1000 {
            let u = bez.param_max() * i as f64 / 1000.0;
            assert!(bez.eval(u).dist(back.eval(u)) < 1e-9);
        }
        for (a, b) in bez.colors_left.iter().zip(back.colors_left.iter()) {
            assert!((a.u - b.u).abs() < 1e-9);
            assert_eq!(a.rgb(), b.rgb());
        }
    }

    #[test]
    fn single_span_back_conversion_is_verbatim() {
        let b = BSplineCurve::new(
            vec![pt(0.0, 0.0), pt(1.0, 2.0), pt(2.0, -1.0), pt(3.0, 0.0)],
            clamped_knots(0.0, &[], 1.0),
        );
        let bez = bspline_to_bezier(&b).unwrap();
        assert_eq!(bez.control_points, b.de_boor);
    }
}
