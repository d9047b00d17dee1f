//! Constrained deformation and least-squares refitting of cubic B-splines.
//!
//! `solve_constraint_offsets` realizes knot-point displacements as the
//! minimum-norm de Boor offset solving `B dD = dQ` through the right
//! pseudo-inverse `dD = B^T (B B^T)^{-1} dQ`, with a small Tikhonov fallback
//! when the Gram matrix is close to singular.
//!
//! `elspia_fit` refits a curve onto a prescribed knot vector by progressive
//! least-squares iteration with a stretching-energy term. The warm start
//! comes from `expand_knots_matched`, which grows the original knot vector by
//! inserting the target knots whose knot points lie farthest from the
//! existing ones, so the initial control polygon is already close.

use super::{BSplineCurve, DEGREE};
use crate::error::{Error, Result};
use crate::geom::Point;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Sparse row-major basis matrix: `rows x cols`, at most 4 nonzeros per row.
/// For closed curves the seam de Boor pair is folded onto one column so that
/// solutions keep the contour sealed.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub cols: usize,
    pub full_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl BasisMatrix {
    /// Basis rows at the given parameters. `fold_seam` identifies the last
    /// de Boor point with the first (closed contours).
    pub fn from_params(curve: &BSplineCurve, params: &[f64], fold_seam: bool) -> Self {
        let n = curve.de_boor.len();
        let cols = if fold_seam { n - 1 } else { n };
        let rows = params
            .iter()
            .map(|&u| {
                let (first, w) = curve.basis_at(u);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
                for (r, &wv) in w.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let mut c = first + r;
                    if fold_seam && c == n - 1 {
                        c = 0;
                    }
                    if let Some(e) = row.iter_mut().find(|(ec, _)| *ec == c) {
                        e.1 += wv;
                    } else {
                        row.push((c, wv));
                    }
                }
                row
            })
            .collect();
        BasisMatrix {
            cols,
            full_cols: n,
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.rows[r].iter().map(|(_, w)| w).sum()
    }

    /// Dense copy, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows() * self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                d[r * self.cols + c] += w;
            }
        }
        d
    }

    fn mul_points(&self, x: &[Point]) -> Vec<Point> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .fold(Point::default(), |acc, &(c, w)| acc + x[c] * w)
            })
            .collect()
    }

    fn mul_transpose_points(&self, y: &[Point]) -> Vec<Point> {
        let mut out = vec![Point::default(); self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                out[c] += y[r] * w;
            }
        }
        out
    }

    /// Map folded-column offsets back onto the full de Boor index range.
    pub fn expand_offsets(&self, offsets: &[Point]) -> Vec<Point> {
        let mut full = Vec::with_capacity(self.full_cols);
        full.extend_from_slice(offsets);
        if self.full_cols > self.cols {
            full.push(offsets[0]);
        }
        full
    }
}

/// In-place Cholesky of a dense symmetric positive definite matrix.
/// Returns the factor's diagonal extremes for a cheap condition estimate.
fn cholesky(a: &mut [f64], n: usize) -> Option<(f64, f64)> {
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                let d = sum.sqrt();
                a[i * n + i] = d;
                dmin = dmin.min(d);
                dmax = dmax.max(d);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    Some((dmin, dmax))
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Result of a constraint solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Offsets in folded-column indexing (see [`BasisMatrix::expand_offsets`]).
    pub offsets: Vec<Point>,
    pub residual: f64,
    pub regularized: bool,
}

/// Minimum-norm de Boor offsets meeting the knot-point displacement
/// constraints `B dD = dQ`. Errors when the residual exceeds `max_residual`.
pub fn solve_constraint_offsets_with(
    basis: &BasisMatrix,
    delta_q: &[Point],
    max_residual: f64,
) -> Result<SolveOutcome> {
    let r = basis.rows();
    assert_eq!(r, delta_q.len());
    if r == 0 {
        return Ok(SolveOutcome {
            offsets: vec![Point::default(); basis.cols],
            residual: 0.0,
            regularized: false,
        });
    }
    if r > basis.cols {
        return Err(Error::numeric(format!(
            "{} constraints exceed {} degrees of freedom",
            r, basis.cols
        )));
    }

    let dense = basis.dense();
    let mut gram = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..=i {
            let mut s = 0.0;
            for c in 0..basis.cols {
                s += dense[i * basis.cols + c] * dense[j * basis.cols + c];
            }
            gram[i * r + j] = s;
            gram[j * r + i] = s;
        }
    }

    let trace: f64 = (0..r).map(|i| gram[i * r + i]).sum();
    let mut regularized = false;
    let mut l = gram.clone();
    let ok = match cholesky(&mut l, r) {
        Some((dmin, dmax)) => (dmax / dmin.max(1e-300)).powi(2) < 1e12,
        None => false,
    };
    if !ok {
        regularized = true;
        let lambda = 1e-10 * (trace / r as f64).max(1.0);
        l.copy_from_slice(&gram);
        for i in 0..r {
            l[i * r + i] += lambda;
        }
        if cholesky(&mut l, r).is_none() {
            return Err(Error::numeric("constraint Gram matrix is not positive"));
        }
        log::warn!("constraint solve regularized (near-singular Gram matrix)");
    }

    let mut yx: Vec<f64> = delta_q.iter().map(|p| p.x).collect();
    let mut yy: Vec<f64> = delta_q.iter().map(|p| p.y).collect();
    cholesky_solve(&l, r, &mut yx);
    cholesky_solve(&l, r, &mut yy);
    let y: Vec<Point> = yx
        .iter()
        .zip(yy.iter())
        .map(|(&x, &y)| Point { x, y })
        .collect();

    let offsets = basis.mul_transpose_points(&y);
    let achieved = basis.mul_points(&offsets);
    let residual = achieved
        .iter()
        .zip(delta_q.iter())
        .map(|(a, q)| (*a - *q).norm())
        .fold(0.0, f64::max);

    if residual > max_residual {
        return Err(Error::numeric(format!(
            "constraint residual {residual:.3e} exceeds limit {max_residual:.1e}"
        )));
    }
    if residual > 1e-8 {
        log::warn!("constraint residual {residual:.3e} above nominal 1e-8");
    }
    Ok(SolveOutcome {
        offsets,
        residual,
        regularized,
    })
}

pub fn solve_constraint_offsets(basis: &BasisMatrix, delta_q: &[Point]) -> Result<SolveOutcome> {
    solve_constraint_offsets_with(basis, delta_q, 1e-6)
}

/// Grow a curve's knot vector to match `target_knots` without changing its
/// geometry. Inserted knots are chosen greedily so their knot points lie as
/// far as possible from the existing knot points, which keeps the later
/// refit's warm start close to the reference.
pub fn expand_knots_matched(curve: &BSplineCurve, target_knots: &[f64]) -> Result<BSplineCurve> {
    if target_knots.len() < curve.knots.len() {
        return Err(Error::validation(
            "target knot vector is shorter than the current one",
        ));
    }
    let (lo, hi) = curve.domain();
    let t_lo = target_knots[DEGREE];
    let t_hi = target_knots[target_knots.len() - DEGREE - 1];
    if (t_lo - lo).abs() > 1e-9 || (t_hi - hi).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "target domain [{t_lo}, {t_hi}] does not match curve domain [{lo}, {hi}]"
        )));
    }

    let mut work = curve.clone();
    while work.knots.len() < target_knots.len() {
        let knot_points: Vec<Point> = work
            .distinct_knots()
            .iter()
            .map(|&t| work.point_at(t))
            .collect();

        // candidate target values still missing from the working knot vector
        let mut best: Option<(f64, f64)> = None; // (score, value)
        let mut i = DEGREE;
        while i < target_knots.len() - DEGREE {
            let v = target_knots[i];
            let mult_target = target_knots[i..].iter().take_while(|&&t| t == v).count();
            i += mult_target;
            if v <= lo || v >= hi {
                continue;
            }
            let mult_cur = work.multiplicity(v);
            if mult_cur >= mult_target || mult_cur >= 3 {
                continue;
            }
            let p = work.point_at(v);
            let score = knot_points
                .iter()
                .map(|q| q.dist(p))
                .fold(f64::INFINITY, f64::min);
            if best.map(|(s, _)| score > s).unwrap_or(true) {
                best = Some((score, v));
            }
        }

        let value = match best {
            Some((_, v)) => v,
            None => {
                // all target values exhausted; split the widest span instead
                let dk = work.distinct_knots();
                let widest = dk
                    .windows(2)
                    .max_by(|a, b| {
                        let la = work.point_at(a[0]).dist(work.point_at(a[1]));
                        let lb = work.point_at(b[0]).dist(work.point_at(b[1]));
                        la.partial_cmp(&lb).unwrap()
                    })
                    .unwrap();
                (widest[0] + widest[1]) / 2.0
            }
        };
        work = super::insert_knot(&work, value)?;
    }
    Ok(work)
}

/// Refit configuration. `tol` is the maximum sampled distance to the
/// reference, in canvas units at the nominal 512-unit canvas.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub energy_weight: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            energy_weight: 1e-3,
            max_iter: 200,
            tol: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub curve: BSplineCurve,
    pub iterations: usize,
    pub max_error: f64,
    pub converged: bool,
    /// Value of the regularized least-squares objective per iteration;
    /// non-increasing by construction of the step size.
    pub objective: Vec<f64>,
}

/// Least-squares progressive refit of `reference` onto `target_knots`,
/// with a stretching-energy term of weight `cfg.energy_weight`.
///
/// On non-convergence the best curve found is still returned with
/// `converged = false` and the achieved error.
pub fn elspia_fit(
    reference: &BSplineCurve,
    target_knots: &[f64],
    cfg: &FitConfig,
) -> Result<FitResult> {
    if target_knots == reference.knots.as_slice() {
        return Ok(FitResult {
            curve: reference.clone(),
            iterations: 0,
            max_error: 0.0,
            converged: true,
            objective: Vec::new(),
        });
    }

    let expanded = expand_knots_matched(reference, target_knots)?;
    let mut fit = BSplineCurve {
        de_boor: expanded.de_boor,
        knots: target_knots.to_vec(),
        colors_left: reference.colors_left.clone(),
        colors_right: reference.colors_right.clone(),
        closed: reference.closed,
    };
    fit.validate()?;

    let n = fit.de_boor.len();
    let fold = fit.closed && fit.de_boor[0].dist(fit.de_boor[n - 1]) < 1e-9;
    let (lo, hi) = fit.domain();
    let span_count = fit.distinct_knots().len() - 1;
    let m = (8 * span_count).clamp(256, 4096);
    let params: Vec<f64> = (0..=m)
        .map(|j| lo + (hi - lo) * j as f64 / m as f64)
        .collect();
    let targets: Vec<Point> = params.iter().map(|&u| reference.point_at(u)).collect();

    let a = BasisMatrix::from_params(&fit, &params, fold);
    let cols = a.cols;

    // stretching energy: integral of squared first-derivative basis products,
    // 3-point Gauss per span (exact for the quartic integrand)
    let mut energy = vec![0.0; cols * cols];
    let gauss = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    let dk = fit.distinct_knots();
    for w in dk.windows(2) {
        let (aa, bb) = (w[0], w[1]);
        let half = (bb - aa) / 2.0;
        for &(x, wgt) in &gauss {
            let u = (aa + bb) / 2.0 + half * x;
            let (first, dvals) = fit.basis_deriv_at(u);
            let mut idx = [0usize; 4];
            for r in 0..4 {
                let mut c = first + r;
                if fold && c == n - 1 {
                    c = 0;
                }
                idx[r] = c;
            }
            for r in 0..4 {
                for s in 0..4 {
                    energy[idx[r] * cols + idx[s]] += wgt * half * dvals[r] * dvals[s];
                }
            }
        }
    }

    let lambda = cfg.energy_weight;
    let mut d: Vec<Point> = fit.de_boor[..cols].to_vec();

    // Jacobi preconditioner and a power-iteration bound on the preconditioned
    // spectral radius give a safe monotone step size.
    let dense_a = a.dense();
    let mut diag = vec![0.0; cols];
    for r in 0..a.rows() {
        for c in 0..cols {
            let v = dense_a[r * cols + c];
            diag[c] += v * v;
        }
    }
    for c in 0..cols {
        diag[c] += lambda * energy[c * cols + c];
        if diag[c] <= 0.0 {
            diag[c] = 1.0;
        }
    }
    let apply_h = |x: &[f64], out: &mut [f64]| {
        // out = A^T A x + lambda E x
        let mut ax = vec![0.0; a.rows()];
        for r in 0..a.rows() {
            let mut s = 0.0;
            for &(c, w) in a.row(r) {
                s += w * x[c];
            }
            ax[r] = s;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in 0..a.rows() {
            for &(c, w) in a.row(r) {
                out[c] += w * ax[r];
            }
        }
        for i in 0..cols {
            let mut s = 0.0;
            for j in 0..cols {
                s += energy[i * cols + j] * x[j];
            }
            out[i] += lambda * s;
        }
    };
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut z: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rho = 1.0;
    let mut hz = vec![0.0; cols];
    for _ in 0..40 {
        apply_h(&z, &mut hz);
        for c in 0..cols {
            hz[c] /= diag[c];
        }
        let nrm = hz.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            break;
        }
        rho = nrm / z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let inv = 1.0 / nrm;
        z.iter_mut().zip(hz.iter()).for_each(|(zz, h)| *zz = h * inv);
    }
    let step = 0.9 / (rho * 1.1).max(1e-12);

    let mut objective = Vec::with_capacity(cfg.max_iter);
    let mut max_err = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..cfg.max_iter {
        let pred = a.mul_points(&d);
        let resid: Vec<Point> = pred
            .iter()
            .zip(targets.iter())
            .map(|(p, q)| *p - *q)
            .collect();
        max_err = resid.iter().map(|r| r.norm()).fold(0.0, f64::max);

        let mut e_term = 0.0;
        let mut ed = vec![Point::default(); cols];
        for i in 0..cols {
            let mut s = Point::default();
            for j in 0..cols {
                s += d[j] * energy[i * cols + j];
            }
            ed[i] = s;
            e_term += d[i].dot(s);
        }
        let obj = 0.5 * resid.iter().map(|r| r.norm2()).sum::<f64>() + 0.5 * lambda * e_term;
        objective.push(obj);

        if max_err <= cfg.tol {
            converged = true;
            iterations = it;
            break;
        }

        let mut grad = a.mul_transpose_points(&resid);
        for i in 0..cols {
            grad[i] += ed[i] * lambda;
            d[i] += grad[i] * (-step / diag[i]);
        }
        iterations = it + 1;
    }

    let full = if fold {
        let mut v = d.clone();
        v.push(d[0]);
        v
    } else {
        d
    };
    fit.de_boor = full;
    if !converged {
        log::warn!(
            "refit stopped at max_iter={} with error {max_err:.4}",
            cfg.max_iter
        );
    }
    Ok(FitResult {
        curve: fit,
        iterations,
        max_error: max_err,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pt;
    use crate::spline::clamped_knots;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_curve(rng: &mut StdRng, n_interior: usize) -> BSplineCurve {
        let mut interior: Vec<f64> = (0..n_interior).map(|_| rng.gen_range(0.05..0.95)).collect();
        interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pts = (0..n_interior + 4)
            .map(|_| pt(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        BSplineCurve::new(pts, clamped_knots(0.0, &interior, 1.0))
    }

    #[test]
    fn zero_constraints_give_zero_offsets() {
        let mut rng = StdRng::seed_from_u64(1);
        let c = random_curve(&mut rng, 5);
        let basis = BasisMatrix::from_params(&c, &[0.2, 0.5, 0.8], false);
        let out =
            solve_constraint_offsets(&basis, &[Point::default(); 3]).unwrap();
        assert!(out.offsets.iter().all(|p| p.norm() < 1e-14));
    }

    #[test]
    fn endpoint_unit_row_moves_one_point() {
        let mut rng = StdRng::seed_from_u64(2);
        let c = random_curve(&mut rng, 5);
        let basis = BasisMatrix::from_params(&c, &[0.0], false);
        assert!((basis.row_sum(0) - 1.0).abs() < 1e-12);
        let dq = pt(2.0, -1.0);
        let out = solve_constraint_offsets(&basis, &[dq]).unwrap();
        assert!(out.offsets[0].dist(dq) < 1e-12);
        assert!(out.offsets[1..].iter().all(|p| p.norm() < 1e-12));
    }

    #[test]
    fn constraints_met_to_tolerance() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let c = random_curve(&mut rng, 8);
            let params: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let basis = BasisMatrix::from_params(&c, &params, false);
            let dq: Vec<Point> = (0..5)
                .map(|_| pt(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let out = solve_constraint_offsets(&basis, &dq).unwrap();
            assert!(out.residual < 1e-8, "residual {}", out.residual);
        }
    }

    #[test]
    fn expand_identity_when_target_equals_current() {
        let mut rng = StdRng::seed_from_u64(4);
        let c = random_curve(&mut rng, 5);
        let out = expand_knots_matched(&c, &c.knots.clone()).unwrap();
        assert_eq!(out.knots, c.knots);
        assert_eq!(out.de_boor, c.de_boor);
    }

    #[test]
    fn expand_prefers_far_knot_points() {
        // two spans; candidate knot points at t=0.25 and t=0.75; existing knot
        // points at 0, 0.5, 1. Brute force says insert whichever candidate
        // point is farther from all existing ones.
        let c = BSplineCurve::new(
            vec![
                pt(0.0, 0.0),
                pt(1.0, 0.0),
                pt(2.0, 0.0),
                pt(8.0, 4.0),
                pt(9.0, 4.0),
            ],
            clamped_knots(0.0, &[0.5], 1.0),
        );
        let target = clamped_knots(0.0, &[0.25, 0.5, 0.75], 1.0);
        // brute force both candidates
        let existing: Vec<Point> = [0.0, 0.5, 1.0].iter().map(|&t| c.point_at(t)).collect();
        let score = |t: f64| {
            existing
                .iter()
                .map(|q| q.dist(c.point_at(t)))
                .fold(f64::INFINITY, f64::min)
        };
        let first_pick = if score(0.25) > score(0.75) { 0.25 } else { 0.75 };

        let mut work = c.clone();
        work = super::super::insert_knot(&work, first_pick).unwrap();
        let by_hand = work.knots.clone();

        let greedy = expand_knots_matched(&c, &target).unwrap();
        // after the first insertion the second candidate follows; compare the
        // knot multiset at the intermediate step by rerunning with a shorter
        // target
        let mut short_target = clamped_knots(0.0, &[0.5], 1.0);
        short_target.insert(5, first_pick.min(0.5 + 1e-12));
        short_target.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let step1 = expand_knots_matched(
            &c,
            &clamped_knots(
                0.0,
                &if first_pick == 0.25 {
                    [0.25, 0.5]
                } else {
                    [0.5, 0.75]
                },
                1.0,
            ),
        )
        .unwrap();
        assert_eq!(step1.knots, by_hand);
        assert_eq!(greedy.knots, target);
        // geometry preserved
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            assert!(c.point_at(u).dist(greedy.point_at(u)) < 1e-12);
        }
    }

    #[test]
    fn elspia_identity_on_equal_knots() {
        let mut rng = StdRng::seed_from_u64(5);
        let c = random_curve(&mut rng, 6);
        let r = elspia_fit(&c, &c.knots.clone(), &FitConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.curve.de_boor, c.de_boor);
    }

    #[test]
    fn elspia_reproduces_straight_line() {
        let c = BSplineCurve::new(
            vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0), pt(3.0, 0.0)],
            clamped_knots(0.0, &[], 1.0),
        );
        let target = clamped_knots(0.0, &[0.21, 0.43, 0.55, 0.78], 1.0);
        let r = elspia_fit(&c, &target, &FitConfig::default()).unwrap();
        for i in 0..=500 {
            let u = i as f64 / 500.0;
            // geometric deviation from the line y = 0
            assert!(r.curve.point_at(u).y.abs() < 1e-9);
        }
        assert_eq!(r.curve.knots, target);
    }

    #[test]
    fn elspia_objective_non_increasing() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..10 {
            let c = random_curve(&mut rng, 6);
            let mut interior: Vec<f64> =
                (0..12).map(|_| rng.gen_range(0.02..0.98)).collect();
            interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let target = clamped_knots(0.0, &interior, 1.0);
            let r = elspia_fit(&c, &target, &FitConfig::default()).unwrap();
            for w in r.objective.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12),
                    "objective increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }
}
