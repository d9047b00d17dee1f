//! Subpixel distance transform of a curve set.
//!
//! Curves are densely sampled (at least 4 samples per pixel of arc length) and
//! queries run against the exact sample positions through a k-d tree, so
//! distances are Euclidean to the sampled point set rather than to a
//! rasterized mask. The per-pixel grid stores the nearest sample identity
//! (curve index and parameter) for pixel-anchored lookups; free-position
//! queries go straight to the tree.

use crate::dci::BezierCurve;
use crate::error::{Error, Result};
use crate::geom::Point;
use rayon::prelude::*;

/// One point sampled from a source curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveSample {
    pub pos: Point,
    pub curve: usize,
    pub u: f64,
}

/// Static 2D k-d tree over curve samples.
struct KdTree {
    // nodes are the samples themselves, arranged in-place; node i splits on
    // axis (depth % 2) with median layout
    samples: Vec<CurveSample>,
}

struct BuildSlice {
    lo: usize,
    hi: usize,
    axis: usize,
}

impl KdTree {
    fn build(mut samples: Vec<CurveSample>) -> Self {
        let mut stack = vec![BuildSlice {
            lo: 0,
            hi: samples.len(),
            axis: 0,
        }];
        while let Some(BuildSlice { lo, hi, axis }) = stack.pop() {
            if hi - lo <= 1 {
                continue;
            }
            let mid = (lo + hi) / 2;
            samples[lo..hi].select_nth_unstable_by(mid - lo, |a, b| {
                let (ka, kb) = if axis == 0 {
                    (a.pos.x, b.pos.x)
                } else {
                    (a.pos.y, b.pos.y)
                };
                ka.partial_cmp(&kb).unwrap()
            });
            let next = 1 - axis;
            stack.push(BuildSlice { lo, hi: mid, axis: next });
            stack.push(BuildSlice {
                lo: mid + 1,
                hi,
                axis: next,
            });
        }
        KdTree { samples }
    }

    /// Nearest sample to `p` for which `accept` holds. Returns the sample
    /// index and squared distance.
    fn nearest_where<F: Fn(&CurveSample) -> bool>(
        &self,
        p: Point,
        accept: &F,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.search(0, self.samples.len(), 0, p, accept, &mut best);
        best
    }

    fn search<F: Fn(&CurveSample) -> bool>(
        &self,
        lo: usize,
        hi: usize,
        axis: usize,
        p: Point,
        accept: &F,
        best: &mut Option<(usize, f64)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let s = &self.samples[mid];
        if accept(s) {
            let d2 = s.pos.dist2(p);
            if best.map(|(_, b)| d2 < b).unwrap_or(true) {
                *best = Some((mid, d2));
            }
        }
        let delta = if axis == 0 {
            p.x - s.pos.x
        } else {
            p.y - s.pos.y
        };
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, 1 - axis, p, accept, best);
        if best.map(|(_, b)| delta * delta < b).unwrap_or(true) {
            self.search(far.0, far.1, 1 - axis, p, accept, best);
        }
    }
}

/// Distance transform of a curve set with nearest-sample identity.
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    /// Per pixel: index of the nearest sample (grid anchored at integer
    /// coordinates).
    nearest: Vec<u32>,
    tree: KdTree,
}

/// Arc-length stride used when sampling curves: 4 samples per pixel.
pub const SAMPLE_STRIDE: f64 = 0.25;

impl DistanceField {
    /// Sample all non-barrier curves and build the field over a `width` x
    /// `height` canvas.
    pub fn build(curves: &[BezierCurve], width: usize, height: usize) -> Result<Self> {
        let mut samples = Vec::new();
        for (ci, c) in curves.iter().enumerate() {
            if c.barrier {
                continue;
            }
            for (u, pos) in c.sample_polyline(SAMPLE_STRIDE) {
                samples.push(CurveSample { pos, curve: ci, u });
            }
        }
        Self::from_samples(samples, width, height)
    }

    /// Build from pre-computed samples (also the hook used by tests).
    pub fn from_samples(samples: Vec<CurveSample>, width: usize, height: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("no geometry: empty curve set"));
        }
        assert!(width > 0 && height > 0);
        let tree = KdTree::build(samples);
        let nearest: Vec<u32> = (0..height)
            .into_par_iter()
            .flat_map_iter(|y| {
                let tree = &tree;
                (0..width).map(move |x| {
                    let p = Point {
                        x: x as f64,
                        y: y as f64,
                    };
                    let (idx, _) = tree
                        .nearest_where(p, &|_| true)
                        .expect("tree is non-empty");
                    idx as u32
                })
            })
            .collect();
        Ok(DistanceField {
            width,
            height,
            nearest,
            tree,
        })
    }

    pub fn samples(&self) -> &[CurveSample] {
        &self.tree.samples
    }

    /// Exact distance from the integer grid position to its nearest sample.
    pub fn distance_at(&self, x: usize, y: usize) -> f64 {
        let s = &self.tree.samples[self.nearest[y * self.width + x] as usize];
        s.pos.dist(Point {
            x: x as f64,
            y: y as f64,
        })
    }

    /// Nearest sample identity stored for a pixel.
    pub fn nearest_at(&self, x: usize, y: usize) -> &CurveSample {
        &self.tree.samples[self.nearest[y * self.width + x] as usize]
    }

    /// Nearest sample to an arbitrary position.
    pub fn nearest_sample(&self, p: Point) -> &CurveSample {
        let (idx, _) = self.tree.nearest_where(p, &|_| true).unwrap();
        &self.tree.samples[idx]
    }

    /// Nearest sample to `p` that is at least `r_min` away from the anchor
    /// point `k`. Used for obstruction checks, where samples essentially at
    /// the anchor itself must not count.
    pub fn nearest_obstruction(&self, p: Point, k: Point, r_min: f64) -> Option<&CurveSample> {
        let r2 = r_min * r_min;
        self.tree
            .nearest_where(p, &|s| s.pos.dist2(k) >= r2)
            .map(|(idx, _)| &self.tree.samples[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pt;

    fn vertical_line_samples(x: f64, y0: f64, y1: f64, step: f64) -> Vec<CurveSample> {
        let n = ((y1 - y0) / step).ceil() as usize;
        (0..=n)
            .map(|i| CurveSample {
                pos: pt(x, y0 + i as f64 * step),
                curve: 0,
                u: i as f64 / n as f64,
            })
            .collect()
    }

    #[test]
    fn distance_to_vertical_line() {
        let field = DistanceField::from_samples(
            vertical_line_samples(10.0, 0.0, 32.0, 0.25),
            32,
            32,
        )
        .unwrap();
        for y in [3usize, 15, 28] {
            assert!((field.distance_at(20, y) - 10.0).abs() <= 0.25);
        }
    }

    #[test]
    fn empty_curve_set_is_error() {
        match DistanceField::from_samples(Vec::new(), 8, 8) {
            Err(e) => assert!(e.to_string().contains("no geometry")),
            Ok(_) => panic!("expected an error for an empty curve set"),
        }
    }

    #[test]
    fn midline_between_parallel_lines() {
        let mut s = vertical_line_samples(12.0, 0.0, 32.0, 0.25);
        let mut right = vertical_line_samples(20.0, 0.0, 32.0, 0.25);
        right.iter_mut().for_each(|x| x.curve = 1);
        s.extend(right);
        let field = DistanceField::from_samples(s, 32, 32).unwrap();
        assert!((field.distance_at(16, 16) - 4.0).abs() <= 0.25);
    }

    #[test]
    fn zero_on_samples() {
        let field =
            DistanceField::from_samples(vertical_line_samples(10.0, 0.0, 16.0, 1.0), 17, 17)
                .unwrap();
        assert_eq!(field.distance_at(10, 5), 0.0);
    }

    #[test]
    fn obstruction_filter_skips_anchor() {
        let s = vec![
            CurveSample {
                pos: pt(0.0, 0.0),
                curve: 0,
                u: 0.0,
            },
            CurveSample {
                pos: pt(0.0, 5.0),
                curve: 1,
                u: 0.0,
            },
        ];
        let field = DistanceField::from_samples(s, 8, 8).unwrap();
        let n = field
            .nearest_obstruction(pt(0.0, 1.0), pt(0.0, 0.0), 2.0)
            .unwrap();
        assert_eq!(n.curve, 1);
    }

    #[test]
    fn kd_matches_brute_force() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(99);
        let samples: Vec<CurveSample> = (0..500)
            .map(|i| CurveSample {
                pos: pt(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)),
                curve: i % 7,
                u: 0.0,
            })
            .collect();
        let field = DistanceField::from_samples(samples.clone(), 4, 4).unwrap();
        for _ in 0..200 {
            let p = pt(rng.gen_range(-5.0..70.0), rng.gen_range(-5.0..70.0));
            let brute = samples
                .iter()
                .map(|s| s.pos.dist(p))
                .fold(f64::INFINITY, f64::min);
            let found = field.nearest_sample(p).pos.dist(p);
            assert!((brute - found).abs() < 1e-12);
        }
    }
}
