//! Rasterization of diffusion-curve images.
//!
//! Curves deposit their left/right colors at the pixels flanking their path;
//! barrier curves cut the pixel-adjacency edges they cross. The final image
//! is the solution of the discrete Laplace equation over the remaining
//! adjacency graph with the deposited pixels held fixed.
//!
//! Colors are sRGB in the data model; diffusion runs on linearized values and
//! the output is sRGB-encoded again, quantized to 8 bits only when writing.

mod solver;

pub use solver::{solve_diffusion, DiffusionReport};

use crate::coloring::ramp_color;
use crate::dci::{BarrierSide, DiffusionCurveImage};
use crate::error::{Error, Result};
use crate::geom::{rot90, Point};
use std::io::Write;
use std::path::Path;

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub fn linearize(rgb: [f64; 3]) -> [f64; 3] {
    [
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    ]
}

/// Raster image with linear RGB channels in [0, 1].
#[derive(Debug, Clone)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RasterImage {
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// sRGB-encoded 8-bit RGB rows.
    pub fn to_srgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            for &c in p {
                out.push((linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = self.to_srgb8();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer size matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_srgb8())?;
        Ok(())
    }

    /// Maximum per-channel difference in 8-bit sRGB steps.
    pub fn max_srgb_diff(&self, other: &RasterImage) -> u8 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.to_srgb8()
            .iter()
            .zip(other.to_srgb8().iter())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }
}

// blocked-edge bits, one per 4-neighbor direction
pub const EDGE_N: u8 = 1;
pub const EDGE_E: u8 = 2;
pub const EDGE_S: u8 = 4;
pub const EDGE_W: u8 = 8;

/// Per-pixel constraints deposited by the curve set: fixed colors (in linear
/// RGB, averaged over all deposits) and blocked adjacency edges. Blocked
/// edges are symmetric between neighbors.
#[derive(Debug, Clone)]
pub struct ConstraintMask {
    pub width: usize,
    pub height: usize,
    fixed_sum: Vec<[f64; 3]>,
    fixed_count: Vec<u32>,
    blocked: Vec<u8>,
}

impl ConstraintMask {
    pub fn new(width: usize, height: usize) -> Self {
        ConstraintMask {
            width,
            height,
            fixed_sum: vec![[0.0; 3]; width * height],
            fixed_count: vec![0; width * height],
            blocked: vec![0; width * height],
        }
    }

    pub fn deposit(&mut self, x: usize, y: usize, linear_rgb: [f64; 3]) {
        let i = y * self.width + x;
        for c in 0..3 {
            self.fixed_sum[i][c] += linear_rgb[c];
        }
        self.fixed_count[i] += 1;
    }

    pub fn fixed_color(&self, x: usize, y: usize) -> Option<[f64; 3]> {
        let i = y * self.width + x;
        let n = self.fixed_count[i];
        if n == 0 {
            return None;
        }
        let s = self.fixed_sum[i];
        Some([s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
    }

    pub fn fixed_pixels(&self) -> usize {
        self.fixed_count.iter().filter(|&&c| c > 0).count()
    }

    pub fn blocked_bits(&self, x: usize, y: usize) -> u8 {
        self.blocked[y * self.width + x]
    }

    pub fn blocked_edges(&self) -> usize {
        self.blocked
            .iter()
            .map(|b| b.count_ones() as usize)
            .sum::<usize>()
            / 2
    }

    /// Cut the adjacency between two 4-neighbor cells (kept symmetric).
    pub fn block_between(&mut self, a: (usize, usize), b: (usize, usize)) {
        let (ax, ay) = a;
        let (bx, by) = b;
        if ax >= self.width || ay >= self.height || bx >= self.width || by >= self.height {
            return;
        }
        let ai = ay * self.width + ax;
        let bi = by * self.width + bx;
        if bx == ax + 1 && by == ay {
            self.blocked[ai] |= EDGE_E;
            self.blocked[bi] |= EDGE_W;
        } else if ax == bx + 1 && by == ay {
            self.blocked[ai] |= EDGE_W;
            self.blocked[bi] |= EDGE_E;
        } else if by == ay + 1 && bx == ax {
            self.blocked[ai] |= EDGE_S;
            self.blocked[bi] |= EDGE_N;
        } else if ay == by + 1 && bx == ax {
            self.blocked[ai] |= EDGE_N;
            self.blocked[bi] |= EDGE_S;
        }
    }
}

/// Raster stride along curves, in pixels.
const RASTER_STRIDE: f64 = 0.5;

/// Deposit color and barrier constraints for every curve of the image onto a
/// `width` x `height` pixel grid (the image should already be scaled to it).
pub fn rasterize_constraints(
    dci: &DiffusionCurveImage,
    width: usize,
    height: usize,
) -> ConstraintMask {
    let mut mask = ConstraintMask::new(width, height);
    for curve in &dci.curves {
        let samples = curve.sample_polyline(RASTER_STRIDE);
        if curve.barrier {
            for w in samples.windows(2) {
                block_crossings(&mut mask, w[0].1, w[1].1);
            }
        }
        let deposit_left =
            !curve.barrier || matches!(curve.barrier_side, BarrierSide::Left | BarrierSide::Both);
        let deposit_right =
            !curve.barrier || matches!(curve.barrier_side, BarrierSide::Right | BarrierSide::Both);
        if curve.colors_left.is_empty() && curve.colors_right.is_empty() {
            continue;
        }
        for &(u, p) in &samples {
            let t = curve.deriv(u).normalized();
            if t.norm() == 0.0 {
                continue;
            }
            let n = rot90(t);
            let lc = cell_of(p + n * 0.5, width, height);
            let rc = cell_of(p - n * 0.5, width, height);
            if lc == rc {
                continue; // too thin to separate sides
            }
            if deposit_left {
                if let (Some(cell), Some(rgb)) = (lc, ramp_color(&curve.colors_left, u)) {
                    mask.deposit(cell.0, cell.1, linearize(rgb));
                }
            }
            if deposit_right {
                if let (Some(cell), Some(rgb)) = (rc, ramp_color(&curve.colors_right, u)) {
                    mask.deposit(cell.0, cell.1, linearize(rgb));
                }
            }
        }
    }
    mask
}

fn cell_of(p: Point, width: usize, height: usize) -> Option<(usize, usize)> {
    let x = p.x.floor();
    let y = p.y.floor();
    if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
        None
    } else {
        Some((x as usize, y as usize))
    }
}

/// Block every pixel-boundary crossing of the segment a-b. Cell boundaries
/// lie on integer coordinates; dense sampling keeps segments short, so each
/// one crosses only a few boundaries.
fn block_crossings(mask: &mut ConstraintMask, a: Point, b: Point) {
    let d = b - a;
    if d.x != 0.0 {
        let (x0, x1) = if a.x < b.x { (a.x, b.x) } else { (b.x, a.x) };
        let mut k = x0.ceil();
        while k <= x1 {
            if k > x0 {
                let t = (k - a.x) / d.x;
                if (0.0..=1.0).contains(&t) {
                    let y = (a.y + t * d.y).floor();
                    if y >= 0.0 && k >= 1.0 {
                        let (yi, ki) = (y as usize, k as usize);
                        mask.block_between((ki - 1, yi), (ki, yi));
                    }
                }
            }
            k += 1.0;
        }
    }
    if d.y != 0.0 {
        let (y0, y1) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
        let mut k = y0.ceil();
        while k <= y1 {
            if k > y0 {
                let t = (k - a.y) / d.y;
                if (0.0..=1.0).contains(&t) {
                    let x = (a.x + t * d.x).floor();
                    if x >= 0.0 && k >= 1.0 {
                        let (xi, ki) = (x as usize, k as usize);
                        mask.block_between((xi, ki - 1), (xi, ki));
                    }
                }
            }
            k += 1.0;
        }
    }
}

/// Render a DCI at the given output size (longest canvas side maps to
/// `size_px`), using the default solver settings.
pub fn render_glyph(
    dci: &DiffusionCurveImage,
    size_px: usize,
) -> Result<(RasterImage, DiffusionReport)> {
    dci.validate()?;
    let scale = size_px as f64 / dci.width.max(dci.height);
    let scaled = scale_dci(dci, scale);
    let w = (dci.width * scale).round().max(1.0) as usize;
    let h = (dci.height * scale).round().max(1.0) as usize;
    let mask = rasterize_constraints(&scaled, w, h);
    if mask.fixed_pixels() == 0 {
        return Err(Error::validation(
            "nothing to render: no curve deposited any color",
        ));
    }
    let (img, report) = solve_diffusion(&mask, 1e-4, 50);
    if !report.converged {
        log::warn!(
            "diffusion stopped after {} cycles with residual {:.2e}",
            report.cycles,
            report.residual
        );
    }
    Ok((img, report))
}

/// Uniformly scale all curve geometry.
pub fn scale_dci(dci: &DiffusionCurveImage, scale: f64) -> DiffusionCurveImage {
    let mut out = dci.clone();
    out.width *= scale;
    out.height *= scale;
    for c in &mut out.curves {
        for p in &mut c.control_points {
            *p = *p * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::{BezierCurve, ColorPoint};
    use crate::geom::pt;

    fn vertical_line_dci() -> DiffusionCurveImage {
        let mut c = BezierCurve::open(vec![
            pt(10.0, 0.0),
            pt(10.0, 10.0),
            pt(10.0, 22.0),
            pt(10.0, 32.0),
        ]);
        c.colors_left = vec![
            ColorPoint::with_rgb([1.0, 0.0, 0.0], 0.0),
            ColorPoint::with_rgb([1.0, 0.0, 0.0], 1.0),
        ];
        c.colors_right = vec![
            ColorPoint::with_rgb([0.0, 0.0, 1.0], 0.0),
            ColorPoint::with_rgb([0.0, 0.0, 1.0], 1.0),
        ];
        DiffusionCurveImage {
            width: 32.0,
            height: 32.0,
            curves: vec![c],
        }
    }

    #[test]
    fn line_sides_get_their_colors() {
        // the line heads +y, so its left side is -x (west)
        let dci = vertical_line_dci();
        let mask = rasterize_constraints(&dci, 32, 32);
        let red = linearize([1.0, 0.0, 0.0]);
        let blue = linearize([0.0, 0.0, 1.0]);
        let mut red_seen = 0;
        let mut blue_seen = 0;
        for y in 2..30 {
            if let Some(c) = mask.fixed_color(9, y) {
                assert!((c[0] - red[0]).abs() < 1e-12, "west side should be red");
                red_seen += 1;
            }
            if let Some(c) = mask.fixed_color(10, y) {
                assert!((c[2] - blue[2]).abs() < 1e-12, "east side should be blue");
                blue_seen += 1;
            }
        }
        assert!(red_seen > 20 && blue_seen > 20);
    }

    #[test]
    fn barrier_blocks_without_color() {
        let mut dci = vertical_line_dci();
        dci.curves[0].barrier = true;
        dci.curves[0].barrier_side = BarrierSide::Left;
        dci.curves[0].colors_left.clear();
        dci.curves[0].colors_right.clear();
        let mask = rasterize_constraints(&dci, 32, 32);
        assert_eq!(mask.fixed_pixels(), 0);
        assert!(mask.blocked_edges() > 25);
    }

    #[test]
    fn gradient_deposits_monotone() {
        let mut dci = vertical_line_dci();
        dci.curves[0].colors_left = vec![
            ColorPoint::with_rgb([0.0, 0.0, 0.0], 0.0),
            ColorPoint::with_rgb([1.0, 1.0, 1.0], 1.0),
        ];
        dci.curves[0].colors_right.clear();
        let mask = rasterize_constraints(&dci, 32, 32);
        let mut prev = -1.0;
        for y in 0..32 {
            if let Some(c) = mask.fixed_color(9, y) {
                assert!(c[0] >= prev - 1e-9, "deposits must increase along the curve");
                prev = c[0];
            }
        }
        assert!(prev > 0.5);
    }

    #[test]
    fn blocked_edges_are_symmetric() {
        let dci = {
            let mut d = vertical_line_dci();
            d.curves[0].barrier = true;
            d
        };
        let mask = rasterize_constraints(&dci, 32, 32);
        for y in 0..32usize {
            for x in 0..31usize {
                let e = mask.blocked_bits(x, y) & EDGE_E != 0;
                let w = mask.blocked_bits(x + 1, y) & EDGE_W != 0;
                assert_eq!(e, w);
            }
        }
        for y in 0..31usize {
            for x in 0..32usize {
                let s = mask.blocked_bits(x, y) & EDGE_S != 0;
                let n = mask.blocked_bits(x, y + 1) & EDGE_N != 0;
                assert_eq!(s, n);
            }
        }
    }

    #[test]
    fn srgb_round_trip() {
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            assert!((linear_to_srgb(srgb_to_linear(c)) - c).abs() < 1e-12);
        }
    }
}
