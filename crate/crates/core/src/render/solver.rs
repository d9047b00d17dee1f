//! Geometric multigrid solver for the barrier-aware Laplace equation.
//!
//! V(2,2) cycles with red-black Gauss-Seidel smoothing and a correction
//! scheme on the coarse grids. Coarse cells become Dirichlet cells whenever
//! any of their fine children is fixed, and a coarse adjacency is blocked
//! only when every fine edge across the interface is blocked, so walled-off
//! regions stay walled off on every level.

use super::{ConstraintMask, RasterImage, EDGE_E, EDGE_N, EDGE_S, EDGE_W};

#[derive(Debug, Clone, Copy)]
pub struct DiffusionReport {
    pub residual: f64,
    pub cycles: usize,
    pub converged: bool,
}

struct Level {
    w: usize,
    h: usize,
    fixed: Vec<bool>,
    blocked: Vec<u8>,
}

impl Level {
    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.w + x
    }

    /// Open 4-neighbors of a cell.
    #[inline]
    fn neighbors(&self, x: usize, y: usize) -> [(bool, usize); 4] {
        let b = self.blocked[self.idx(x, y)];
        [
            (y > 0 && b & EDGE_N == 0, if y > 0 { self.idx(x, y - 1) } else { 0 }),
            (
                x + 1 < self.w && b & EDGE_E == 0,
                if x + 1 < self.w { self.idx(x + 1, y) } else { 0 },
            ),
            (
                y + 1 < self.h && b & EDGE_S == 0,
                if y + 1 < self.h { self.idx(x, y + 1) } else { 0 },
            ),
            (x > 0 && b & EDGE_W == 0, if x > 0 { self.idx(x - 1, y) } else { 0 }),
        ]
    }

    /// One red-black Gauss-Seidel sweep of `u` against right-hand side `f`.
    fn smooth(&self, u: &mut [[f64; 3]], f: &[[f64; 3]]) {
        for color in 0..2usize {
            for y in 0..self.h {
                for x in 0..self.w {
                    if (x + y) % 2 != color {
                        continue;
                    }
                    let i = self.idx(x, y);
                    if self.fixed[i] {
                        continue;
                    }
                    let mut acc = [0.0; 3];
                    let mut deg = 0.0;
                    for (open, j) in self.neighbors(x, y) {
                        if open {
                            deg += 1.0;
                            for c in 0..3 {
                                acc[c] += u[j][c];
                            }
                        }
                    }
                    if deg == 0.0 {
                        continue;
                    }
                    for c in 0..3 {
                        u[i][c] = (acc[c] + f[i][c]) / deg;
                    }
                }
            }
        }
    }

    /// Residual `f - A u` at free cells (zero at fixed cells); returns its
    /// infinity norm as a side effect.
    fn residual(&self, u: &[[f64; 3]], f: &[[f64; 3]], r: &mut [[f64; 3]]) -> f64 {
        let mut max = 0.0f64;
        for y in 0..self.h {
            for x in 0..self.w {
                let i = self.idx(x, y);
                if self.fixed[i] {
                    r[i] = [0.0; 3];
                    continue;
                }
                let mut acc = [0.0; 3];
                let mut deg = 0.0;
                for (open, j) in self.neighbors(x, y) {
                    if open {
                        deg += 1.0;
                        for c in 0..3 {
                            acc[c] += u[j][c];
                        }
                    }
                }
                for c in 0..3 {
                    let v = f[i][c] - (deg * u[i][c] - acc[c]);
                    r[i][c] = v;
                    max = max.max(v.abs());
                }
            }
        }
        max
    }
}

fn coarsen(fine: &Level) -> Level {
    let w = fine.w.div_ceil(2);
    let h = fine.h.div_ceil(2);
    let mut fixed = vec![false; w * h];
    let mut blocked = vec![0u8; w * h];
    let edge_open = |x: usize, y: usize, bit: u8| -> bool {
        x < fine.w && y < fine.h && fine.blocked[fine.idx(x, y)] & bit == 0
    };
    for cy in 0..h {
        for cx in 0..w {
            let i = cy * w + cx;
            let mut any_fixed = false;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (x, y) = (2 * cx + dx, 2 * cy + dy);
                    if x < fine.w && y < fine.h && fine.fixed[fine.idx(x, y)] {
                        any_fixed = true;
                    }
                }
            }
            fixed[i] = any_fixed;

            // a coarse edge stays open if any fine edge crosses the interface
            let east_open = (0..2).any(|dy| {
                let y = 2 * cy + dy;
                edge_open(2 * cx + 1, y, EDGE_E)
            });
            if !east_open && cx + 1 < w {
                blocked[i] |= EDGE_E;
                blocked[cy * w + cx + 1] |= EDGE_W;
            }
            let south_open = (0..2).any(|dx| {
                let x = 2 * cx + dx;
                edge_open(x, 2 * cy + 1, EDGE_S)
            });
            if !south_open && cy + 1 < h {
                blocked[i] |= EDGE_S;
                blocked[(cy + 1) * w + cx] |= EDGE_N;
            }
        }
    }
    Level {
        w,
        h,
        fixed,
        blocked,
    }
}

fn vcycle(levels: &[Level], li: usize, u: &mut Vec<[f64; 3]>, f: &[[f64; 3]]) {
    let level = &levels[li];
    if li + 1 == levels.len() {
        for _ in 0..200 {
            level.smooth(u, f);
        }
        return;
    }
    for _ in 0..2 {
        level.smooth(u, f);
    }
    let mut r = vec![[0.0; 3]; u.len()];
    level.residual(u, f, &mut r);

    let coarse = &levels[li + 1];
    let mut fc = vec![[0.0; 3]; coarse.w * coarse.h];
    for cy in 0..coarse.h {
        for cx in 0..coarse.w {
            let ci = cy * coarse.w + cx;
            if coarse.fixed[ci] {
                continue;
            }
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (x, y) = (2 * cx + dx, 2 * cy + dy);
                    if x < level.w && y < level.h {
                        let i = level.idx(x, y);
                        if !level.fixed[i] {
                            for c in 0..3 {
                                acc[c] += r[i][c];
                            }
                            n += 1.0;
                        }
                    }
                }
            }
            if n > 0.0 {
                // full weighting scaled for the 2x coarser operator
                for c in 0..3 {
                    fc[ci][c] = acc[c] * (4.0 / n);
                }
            }
        }
    }

    let mut e = vec![[0.0; 3]; coarse.w * coarse.h];
    vcycle(levels, li + 1, &mut e, &fc);

    for y in 0..level.h {
        for x in 0..level.w {
            let i = level.idx(x, y);
            if level.fixed[i] {
                continue;
            }
            let ci = (y / 2) * coarse.w + (x / 2);
            for c in 0..3 {
                u[i][c] += e[ci][c];
            }
        }
    }
    for _ in 0..2 {
        level.smooth(u, f);
    }
}

/// Solve the diffusion problem to the requested residual infinity norm, or
/// until `max_cycles` V-cycles have run. Free pixels in regions without any
/// reachable fixed pixel keep the neutral initial value (white).
pub fn solve_diffusion(mask: &ConstraintMask, tol: f64, max_cycles: usize) -> (RasterImage, DiffusionReport) {
    let (w, h) = (mask.width, mask.height);
    let mut fixed = vec![false; w * h];
    let mut u = vec![[1.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(c) = mask.fixed_color(x, y) {
                fixed[y * w + x] = true;
                u[y * w + x] = c;
            }
        }
    }
    let mut blocked = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            blocked[y * w + x] = mask.blocked_bits(x, y);
        }
    }

    let mut levels = vec![Level {
        w,
        h,
        fixed,
        blocked,
    }];
    while levels.last().unwrap().w.min(levels.last().unwrap().h) > 8 {
        levels.push(coarsen(levels.last().unwrap()));
    }

    let f = vec![[0.0f64; 3]; w * h];
    let mut scratch = vec![[0.0f64; 3]; w * h];
    let mut residual = levels[0].residual(&u, &f, &mut scratch);
    let mut cycles = 0;
    while residual > tol && cycles < max_cycles {
        vcycle(&levels, 0, &mut u, &f);
        cycles += 1;
        residual = levels[0].residual(&u, &f, &mut scratch);
    }

    (
        RasterImage {
            width: w,
            height: h,
            pixels: u,
        },
        DiffusionReport {
            residual,
            cycles,
            converged: residual <= tol,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Left column 0, right column 1: solution is the linear ramp.
    fn strip_mask(n: usize) -> ConstraintMask {
        let mut m = ConstraintMask::new(n, n);
        for y in 0..n {
            m.deposit(0, y, [0.0; 3]);
            m.deposit(n - 1, y, [1.0; 3]);
        }
        m
    }

    #[test]
    fn strip_matches_linear_ramp() {
        let n = 129;
        let m = strip_mask(n);
        let (img, report) = solve_diffusion(&m, 1e-6, 60);
        assert!(report.converged, "residual {}", report.residual);
        for y in (0..n).step_by(16) {
            for x in 0..n {
                let expect = x as f64 / (n - 1) as f64;
                let got = img.get(x, y)[0];
                assert!(
                    (got - expect).abs() < 2.0 / 255.0,
                    "ramp off at ({x},{y}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn constant_constraints_give_constant_image() {
        let n = 64;
        let mut m = ConstraintMask::new(n, n);
        for t in 0..n {
            m.deposit(t, 0, [0.3; 3]);
            m.deposit(t, n - 1, [0.3; 3]);
            m.deposit(0, t, [0.3; 3]);
            m.deposit(n - 1, t, [0.3; 3]);
        }
        let (img, _) = solve_diffusion(&m, 1e-6, 60);
        for p in &img.pixels {
            assert!((p[0] - 0.3).abs() < 1.0 / 255.0);
        }
    }

    #[test]
    fn wall_isolates_region() {
        let n = 64;
        let mut m = ConstraintMask::new(n, n);
        // vertical wall between columns 31 and 32
        for y in 0..n {
            m.block_between((31, y), (32, y));
        }
        for y in 0..n {
            m.deposit(0, y, [0.0; 3]);
            m.deposit(33, y, [0.8; 3]);
        }
        let (img, report) = solve_diffusion(&m, 1e-8, 80);
        assert!(report.converged);
        // left region sees only the black source
        for y in (0..n).step_by(7) {
            for x in 1..=31 {
                assert!(img.get(x, y)[0].abs() < 1e-4);
            }
            // right region sees only the bright source
            for x in 33..n {
                assert!((img.get(x, y)[0] - 0.8).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn more_cycles_never_increase_residual() {
        let n = 65;
        let m = strip_mask(n);
        let (_, r1) = solve_diffusion(&m, 0.0, 4);
        let (_, r2) = solve_diffusion(&m, 0.0, 8);
        assert!(r2.residual <= r1.residual * (1.0 + 1e-12));
    }

    #[test]
    fn max_principle_holds() {
        let n = 48;
        let mut m = ConstraintMask::new(n, n);
        for y in 0..n {
            m.deposit(0, y, [0.2; 3]);
            m.deposit(n - 1, y, [0.7; 3]);
        }
        let (img, _) = solve_diffusion(&m, 1e-6, 60);
        for p in &img.pixels {
            assert!(p[0] >= 0.2 - 1e-6 && p[0] <= 0.7 + 1e-6);
        }
    }
}
