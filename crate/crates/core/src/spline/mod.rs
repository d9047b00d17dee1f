//! Cubic B-spline numerics: evaluation, knot insertion, arc-length tables,
//! basis rows, and the fitting machinery used by contour modulation.
//!
//! Curves are clamped cubics: `knots.len() == de_boor.len() + 4`, 4-fold end
//! knots, interior knot multiplicity at most 3. Closed contours keep the
//! clamped representation with coinciding end points; the fitting and
//! constraint solvers identify the seam pair so closure is preserved exactly.

mod convert;
mod fit;

pub use convert::{bezier_to_bspline, bspline_to_bezier};
pub use fit::{
    elspia_fit, expand_knots_matched, solve_constraint_offsets, BasisMatrix, FitConfig, FitResult,
    SolveOutcome,
};

use crate::dci::ColorPoint;
use crate::error::{Error, Result};
use crate::geom::Point;

pub const DEGREE: usize = 3;

/// A clamped cubic B-spline contour with reparametrized color attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineCurve {
    pub de_boor: Vec<Point>,
    pub knots: Vec<f64>,
    pub colors_left: Vec<ColorPoint>,
    pub colors_right: Vec<ColorPoint>,
    pub closed: bool,
}

impl BSplineCurve {
    pub fn new(de_boor: Vec<Point>, knots: Vec<f64>) -> Self {
        BSplineCurve {
            de_boor,
            knots,
            colors_left: Vec::new(),
            colors_right: Vec::new(),
            closed: false,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        let n = self.de_boor.len();
        (self.knots[DEGREE], self.knots[n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.de_boor.len();
        if n < 4 {
            return Err(Error::validation("cubic curve needs at least 4 de Boor points"));
        }
        if self.knots.len() != n + 4 {
            return Err(Error::validation(format!(
                "knot count {} != de Boor count {} + 4",
                self.knots.len(),
                n
            )));
        }
        if self.knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::validation("knots must be non-decreasing"));
        }
        let k = &self.knots;
        let m = k.len();
        if k[0] != k[3] || k[m - 4] != k[m - 1] {
            return Err(Error::validation("end knots must be 4-fold (clamped)"));
        }
        let (lo, hi) = self.domain();
        let interior = &k[4..m - 4];
        let mut run = 1usize;
        for w in interior.windows(2) {
            run = if w[1] == w[0] { run + 1 } else { 1 };
            if run > 3 {
                return Err(Error::validation(format!(
                    "interior knot multiplicity > 3 at t={}",
                    w[0]
                )));
            }
        }
        if self.de_boor.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("non-finite de Boor point"));
        }
        for colors in [&self.colors_left, &self.colors_right] {
            let mut prev = f64::NEG_INFINITY;
            for c in colors.iter() {
                if c.u < lo - 1e-9 || c.u > hi + 1e-9 {
                    return Err(Error::validation(format!(
                        "color parameter {} outside knot domain [{lo}, {hi}]",
                        c.u
                    )));
                }
                if c.u < prev {
                    return Err(Error::validation("color points not sorted by u"));
                }
                prev = c.u;
            }
        }
        Ok(())
    }

    /// Index k with `knots[k] <= u < knots[k+1]`, clamped into the evaluable
    /// range of the clamped cubic.
    pub fn span_of(&self, u: f64) -> usize {
        find_span(&self.knots, DEGREE, self.de_boor.len(), u)
    }

    /// Point on the curve; errors when `u` falls outside the knot domain.
    pub fn eval(&self, u: f64) -> Result<Point> {
        let (lo, hi) = self.domain();
        if u < lo - 1e-12 || u > hi + 1e-12 {
            return Err(Error::Domain { u, lo, hi });
        }
        Ok(self.point_at(u))
    }

    /// Point on the curve with `u` clamped into the domain.
    pub fn point_at(&self, u: f64) -> Point {
        eval_de_boor(&self.de_boor, &self.knots, DEGREE, u)
    }

    /// Exact first derivative with respect to the knot parameter.
    pub fn deriv1(&self, u: f64) -> Point {
        let (q, v) = self.hodograph();
        eval_de_boor(&q, v, 2, u)
    }

    /// Exact second derivative.
    pub fn deriv2(&self, u: f64) -> Point {
        let (q, v) = self.hodograph();
        let m = v.len();
        let mut r = Vec::with_capacity(q.len().saturating_sub(1));
        for i in 0..q.len() - 1 {
            let denom = v[i + 3] - v[i + 1];
            let d = if denom > 0.0 {
                (q[i + 1] - q[i]) * (2.0 / denom)
            } else {
                Point::default()
            };
            r.push(d);
        }
        eval_de_boor(&r, &v[1..m - 1], 1, u)
    }

    /// Control points and knot slice of the first-derivative curve.
    fn hodograph(&self) -> (Vec<Point>, &[f64]) {
        let n = self.de_boor.len();
        let k = &self.knots;
        let mut q = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let denom = k[i + 4] - k[i + 1];
            let d = if denom > 0.0 {
                (self.de_boor[i + 1] - self.de_boor[i]) * (3.0 / denom)
            } else {
                Point::default()
            };
            q.push(d);
        }
        (q, &k[1..k.len() - 1])
    }

    /// Unit tangent, falling back to a one-sided probe at degenerate spots.
    pub fn tangent_at(&self, u: f64) -> Point {
        let d = self.deriv1(u);
        if d.norm() > 1e-12 {
            return d.normalized();
        }
        let (lo, hi) = self.domain();
        let h = (hi - lo) * 1e-6;
        let a = self.point_at((u - h).max(lo));
        let b = self.point_at((u + h).min(hi));
        (b - a).normalized()
    }

    /// The four cubic basis values at `u` together with the index of the
    /// first de Boor point they weight. Values sum to 1.
    pub fn basis_at(&self, u: f64) -> (usize, [f64; 4]) {
        let span = self.span_of(u);
        let vals = basis_funs(&self.knots, span, u, DEGREE);
        let mut w = [0.0; 4];
        w[..4].copy_from_slice(&vals[..4]);
        (span - DEGREE, w)
    }

    /// Derivatives of the four active cubic basis functions at `u`.
    pub fn basis_deriv_at(&self, u: f64) -> (usize, [f64; 4]) {
        let span = self.span_of(u);
        let n2 = basis_funs(&self.knots, span, u, 2);
        let k = &self.knots;
        let quad = |i: isize| -> f64 {
            // nonzero quadratics at this span are N_{span-2..span}
            let lo = span as isize - 2;
            if i < lo || i > span as isize {
                0.0
            } else {
                n2[(i - lo) as usize]
            }
        };
        let mut out = [0.0; 4];
        for (r, slot) in out.iter_mut().enumerate() {
            let i = (span - DEGREE + r) as isize;
            let d1 = k[i as usize + 3] - k[i as usize];
            let t1 = if d1 > 0.0 { quad(i) / d1 } else { 0.0 };
            let d2 = k[i as usize + 4] - k[i as usize + 1];
            let t2 = if d2 > 0.0 { quad(i + 1) / d2 } else { 0.0 };
            *slot = 3.0 * (t1 - t2);
        }
        (span - DEGREE, out)
    }

    /// Distinct knot values spanning the domain, in order.
    pub fn distinct_knots(&self) -> Vec<f64> {
        let (lo, hi) = self.domain();
        let mut out = vec![lo];
        for &t in &self.knots {
            if t > *out.last().unwrap() && t <= hi {
                out.push(t);
            }
        }
        out
    }

    /// Multiplicity of knot value `t` (exact comparison).
    pub fn multiplicity(&self, t: f64) -> usize {
        self.knots.iter().filter(|&&k| k == t).count()
    }

    /// Dense polyline of the curve as `(u, point)` samples.
    pub fn sample_polyline(&self, samples: usize) -> Vec<(f64, Point)> {
        let (lo, hi) = self.domain();
        (0..=samples)
            .map(|i| {
                let u = lo + (hi - lo) * i as f64 / samples as f64;
                (u, self.point_at(u))
            })
            .collect()
    }
}

/// Span lookup: largest k in `[p, n-1]` with `knots[k] <= u` (and
/// `knots[k] < knots[k+1]`), so evaluation at the domain end stays valid.
pub(crate) fn find_span(knots: &[f64], p: usize, n_points: usize, u: f64) -> usize {
    let n = n_points - 1;
    if u >= knots[n + 1] {
        // walk left over any zero-width spans at the end
        let mut k = n;
        while k > p && knots[k] == knots[k + 1] {
            k -= 1;
        }
        return k;
    }
    if u <= knots[p] {
        let mut k = p;
        while k < n && knots[k] == knots[k + 1] {
            k += 1;
        }
        return k;
    }
    let (mut lo, mut hi) = (p, n + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if knots[mid] <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Nonzero basis values `N_{span-p .. span, p}(u)` (the Cox-de Boor triangle).
pub(crate) fn basis_funs(knots: &[f64], span: usize, u: f64, p: usize) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// De Boor evaluation of a degree-`p` spline, clamping `u` into the domain.
pub(crate) fn eval_de_boor(points: &[Point], knots: &[f64], p: usize, u: f64) -> Point {
    let n = points.len();
    let u = u.clamp(knots[p], knots[n]);
    let span = find_span(knots, p, n, u);
    let mut d: Vec<Point> = (0..=p).map(|r| points[span - p + r]).collect();
    for k in 1..=p {
        for r in (k..=p).rev() {
            let i = span - p + r;
            let denom = knots[i + p + 1 - k] - knots[i];
            let alpha = if denom == 0.0 { 0.0 } else { (u - knots[i]) / denom };
            d[r] = d[r - 1] * (1.0 - alpha) + d[r] * alpha;
        }
    }
    d[p]
}

/// Boehm single-knot insertion. Geometry is unchanged; the de Boor count
/// grows by one. Fails if the resulting interior multiplicity would exceed 3.
pub fn insert_knot(curve: &BSplineCurve, t_new: f64) -> Result<BSplineCurve> {
    let (lo, hi) = curve.domain();
    if !(t_new > lo && t_new < hi) {
        return Err(Error::Domain {
            u: t_new,
            lo,
            hi,
        });
    }
    if curve.multiplicity(t_new) >= 3 {
        return Err(Error::MultiplicityOverflow { knot: t_new });
    }
    let k = find_span(&curve.knots, DEGREE, curve.de_boor.len(), t_new);
    let old = &curve.de_boor;
    let knots = &curve.knots;
    let mut pts = Vec::with_capacity(old.len() + 1);
    pts.extend_from_slice(&old[..k - 2]);
    for i in k - 2..=k {
        let denom = knots[i + 3] - knots[i];
        let alpha = if denom == 0.0 {
            0.0
        } else {
            (t_new - knots[i]) / denom
        };
        pts.push(old[i - 1] * (1.0 - alpha) + old[i] * alpha);
    }
    pts.extend_from_slice(&old[k..]);

    let mut new_knots = curve.knots.clone();
    new_knots.insert(k + 1, t_new);

    Ok(BSplineCurve {
        de_boor: pts,
        knots: new_knots,
        colors_left: curve.colors_left.clone(),
        colors_right: curve.colors_right.clone(),
        closed: curve.closed,
    })
}

/// Lookup table from curve parameter to cumulative arc length, built from
/// dense chord sampling. Spans of zero width contribute nothing.
#[derive(Debug, Clone)]
pub struct ArcLengthTable {
    us: Vec<f64>,
    ss: Vec<f64>,
    total: f64,
}

impl ArcLengthTable {
    pub fn build(curve: &BSplineCurve, samples_per_span: usize) -> Self {
        assert!(samples_per_span >= 8, "need at least 8 samples per span");
        let spans = curve.distinct_knots();
        let mut us = vec![spans[0]];
        let mut ss = vec![0.0];
        let mut prev = curve.point_at(spans[0]);
        let mut acc = 0.0;
        for w in spans.windows(2) {
            for i in 1..=samples_per_span {
                let u = w[0] + (w[1] - w[0]) * i as f64 / samples_per_span as f64;
                let p = curve.point_at(u);
                acc += prev.dist(p);
                prev = p;
                us.push(u);
                ss.push(acc);
            }
        }
        ArcLengthTable { us, ss, total: acc }
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    /// Parameter at a given arc length, by monotone linear interpolation.
    pub fn u_at_length(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.total);
        let idx = match self
            .ss
            .binary_search_by(|x| x.partial_cmp(&s).unwrap())
        {
            Ok(i) => return self.us[i],
            Err(i) => i,
        };
        if idx == 0 {
            return self.us[0];
        }
        if idx >= self.ss.len() {
            return *self.us.last().unwrap();
        }
        let (s0, s1) = (self.ss[idx - 1], self.ss[idx]);
        let (u0, u1) = (self.us[idx - 1], self.us[idx]);
        if s1 == s0 {
            u0
        } else {
            u0 + (u1 - u0) * (s - s0) / (s1 - s0)
        }
    }

    /// Arc length at a given parameter.
    pub fn length_at(&self, u: f64) -> f64 {
        let u = u.clamp(self.us[0], *self.us.last().unwrap());
        let idx = match self
            .us
            .binary_search_by(|x| x.partial_cmp(&u).unwrap())
        {
            Ok(i) => return self.ss[i],
            Err(i) => i,
        };
        if idx == 0 {
            return 0.0;
        }
        if idx >= self.us.len() {
            return self.total;
        }
        let (u0, u1) = (self.us[idx - 1], self.us[idx]);
        let (s0, s1) = (self.ss[idx - 1], self.ss[idx]);
        if u1 == u0 {
            s0
        } else {
            s0 + (s1 - s0) * (u - u0) / (u1 - u0)
        }
    }
}

/// Clamped knot vector `[a x4, interior..., b x4]`.
pub fn clamped_knots(a: f64, interior: &[f64], b: f64) -> Vec<f64> {
    let mut v = vec![a; 4];
    v.extend_from_slice(interior);
    v.extend_from_slice(&[b; 4]);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pt;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn straight_line() -> BSplineCurve {
        BSplineCurve::new(
            vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0), pt(3.0, 0.0)],
            clamped_knots(0.0, &[], 1.0),
        )
    }

    pub(crate) fn random_curve(rng: &mut StdRng, n_interior: usize) -> BSplineCurve {
        let mut interior: Vec<f64> = (0..n_interior).map(|_| rng.gen_range(0.05..0.95)).collect();
        interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_pts = n_interior + 4;
        let pts = (0..n_pts)
            .map(|_| pt(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        BSplineCurve::new(pts, clamped_knots(0.0, &interior, 1.0))
    }

    #[test]
    fn clamped_endpoint_interpolation() {
        let c = straight_line();
        assert_eq!(c.eval(0.0).unwrap(), pt(0.0, 0.0));
        assert_eq!(c.eval(1.0).unwrap(), pt(3.0, 0.0));
    }

    #[test]
    fn line_stays_flat_mid_domain() {
        let c = straight_line();
        let p = c.eval(0.5).unwrap();
        assert!(p.y.abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_error() {
        let c = straight_line();
        assert!(matches!(c.eval(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..40 {
            let c = random_curve(&mut rng, 5);
            for _ in 0..20 {
                let u = rng.gen_range(0.01..0.99);
                let h = 1e-6;
                let fd = (c.point_at(u + h) - c.point_at(u - h)) / (2.0 * h);
                let an = c.deriv1(u);
                let scale = an.norm().max(1.0);
                assert!(
                    (fd - an).norm() / scale < 1e-6,
                    "fd {:?} vs analytic {:?} at u={u}",
                    fd,
                    an
                );
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..20 {
            let c = random_curve(&mut rng, 4);
            for _ in 0..10 {
                let u = rng.gen_range(0.05..0.95);
                let h = 1e-5;
                let fd = (c.deriv1(u + h) - c.deriv1(u - h)) / (2.0 * h);
                let an = c.deriv2(u);
                let scale = an.norm().max(1.0);
                assert!((fd - an).norm() / scale < 1e-4);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..50 {
            let c = random_curve(&mut rng, 6);
            for _ in 0..20 {
                let u = rng.gen_range(0.0..=1.0);
                let (_, w) = c.basis_at(u);
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_derivs_sum_to_zero() {
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..30 {
            let c = random_curve(&mut rng, 6);
            for _ in 0..10 {
                let u = rng.gen_range(0.01..0.99);
                let (_, dw) = c.basis_deriv_at(u);
                let sum: f64 = dw.iter().sum();
                assert!(sum.abs() < 1e-9, "sum {sum}");
            }
        }
    }

    #[test]
    fn insert_at_existing_knot_doubles_it() {
        let mut rng = StdRng::seed_from_u64(15);
        let c = random_curve(&mut rng, 3);
        let t = c.knots[5];
        let c2 = insert_knot(&c, t).unwrap();
        assert_eq!(c2.multiplicity(t), 2);
        for i in 0..=500 {
            let u = i as f64 / 500.0;
            assert!(c.point_at(u).dist(c2.point_at(u)) < 1e-12);
        }
    }

    #[test]
    fn insert_preserves_collinearity() {
        let c = straight_line();
        let c2 = insert_knot(&c, 0.5).unwrap();
        assert!(c2.de_boor.iter().all(|p| p.y.abs() < 1e-15));
        assert_eq!(c2.de_boor.len(), 5);
    }

    #[test]
    fn repeated_insertion_is_exact() {
        let mut rng = StdRng::seed_from_u64(16);
        let c = random_curve(&mut rng, 4);
        let mut cur = c.clone();
        for _ in 0..10 {
            let t = rng.gen_range(0.02..0.98);
            if cur.multiplicity(t) < 3 {
                cur = insert_knot(&cur, t).unwrap();
            }
        }
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            assert!(c.point_at(u).dist(cur.point_at(u)) < 1e-12);
        }
    }

    #[test]
    fn multiplicity_overflow_rejected() {
        let mut c = straight_line();
        for _ in 0..3 {
            c = insert_knot(&c, 0.5).unwrap();
        }
        assert!(matches!(
            insert_knot(&c, 0.5),
            Err(Error::MultiplicityOverflow { .. })
        ));
    }

    #[test]
    fn straight_segment_arc_length() {
        let c = BSplineCurve::new(
            vec![pt(0.0, 0.0), pt(10.0 / 3.0, 0.0), pt(20.0 / 3.0, 0.0), pt(10.0, 0.0)],
            clamped_knots(0.0, &[], 1.0),
        );
        let t = ArcLengthTable::build(&c, 64);
        assert!((t.total_length() - 10.0).abs() < 1e-9);
        // uniform-speed line: half the length sits at half the domain
        assert!((t.u_at_length(5.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn arc_table_inverse_round_trip() {
        let mut rng = StdRng::seed_from_u64(17);
        let c = random_curve(&mut rng, 5);
        let t = ArcLengthTable::build(&c, 64);
        for i in 0..=20 {
            let s = t.total_length() * i as f64 / 20.0;
            let u = t.u_at_length(s);
            assert!((t.length_at(u) - s).abs() < 1e-9 * t.total_length().max(1.0));
        }
    }
}
