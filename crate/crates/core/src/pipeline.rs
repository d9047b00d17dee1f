//! End-to-end glyph construction: quantized levels to physical stimuli,
//! contour conversion, geometric and color modulation, margin segmentation,
//! and rasterization.
//!
//! Physical stimuli are calibrated in millimeters at a glyph size; the icon
//! canvas maps onto that size, so `units_per_mm = canvas / glyph_size_mm`.
//! When no geometric variable is active the contour geometry is never
//! converted, which keeps identity pipelines pixel-exact.

use crate::coloring::{place_color_intervals, set_inner_color_rgb, ColorSide, ColorWaveSpec};
use crate::dci::{DiffusionCurveImage, GlyphParams};
use crate::dist::DistanceField;
use crate::error::{Error, Result};
use crate::percept::{PerceptualModel, Variable};
use crate::render::{render_glyph, DiffusionReport, RasterImage};
use crate::spline::{bezier_to_bspline, bspline_to_bezier, FitConfig};
use crate::wave::{modulate_geometry, Modulated, WaveSpec};
use std::path::PathBuf;

/// Pipeline-wide settings with the calibrated defaults.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Physical glyph size the stimuli are calibrated for.
    pub glyph_size_mm: f64,
    /// Output raster size; when absent it derives from `dpi_px_per_mm`.
    pub canvas_px: Option<usize>,
    pub dpi_px_per_mm: f64,
    /// Joint merge threshold for the contour conversion, degrees.
    pub alpha_deg: f64,
    /// Skeleton clearance for intersection prevention, canvas units.
    pub epsilon_px: f64,
    pub fit: FitConfig,
    pub colormap: String,
    pub colormap_registry: Option<PathBuf>,
    pub color_side: ColorSide,
    /// Canvas background; color intervals matching it are masked out.
    pub background: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            glyph_size_mm: 50.0,
            canvas_px: None,
            dpi_px_per_mm: 96.0 / 25.4,
            alpha_deg: 3.5,
            epsilon_px: 3.0,
            fit: FitConfig::default(),
            colormap: "viridis".into(),
            colormap_registry: None,
            color_side: ColorSide::Both,
            background: [1.0, 1.0, 1.0],
        }
    }
}

impl PipelineConfig {
    pub fn render_px(&self) -> usize {
        self.canvas_px
            .unwrap_or_else(|| (self.glyph_size_mm * self.dpi_px_per_mm).round().max(16.0) as usize)
    }

    pub fn units_per_mm(&self, dci: &DiffusionCurveImage) -> f64 {
        dci.width.max(dci.height) / self.glyph_size_mm
    }
}

/// Result of applying glyph parameters to an icon.
#[derive(Debug, Clone)]
pub struct GlyphOutcome {
    pub dci: DiffusionCurveImage,
    pub warnings: Vec<String>,
    pub skipped_curves: usize,
}

/// Apply quantized glyph parameters to an icon, producing the modulated DCI.
pub fn apply_glyph_params(
    icon: &DiffusionCurveImage,
    params: &GlyphParams,
    model: &PerceptualModel,
    cfg: &PipelineConfig,
) -> Result<GlyphOutcome> {
    icon.validate()?;
    check_levels(params, model)?;

    let mut warnings = Vec::new();
    let geometry_active = params.geom_freq > 0 && params.geom_ampl > 0;
    let color_active = params.color_freq > 0 && params.color_ampl > 0;
    if (params.geom_freq > 0) != (params.geom_ampl > 0) {
        warnings.push(
            "geometric frequency and amplitude must both be set; geometry left unmodulated"
                .into(),
        );
    }
    if (params.color_freq > 0) != (params.color_ampl > 0) {
        warnings
            .push("color frequency and amplitude must both be set; color left unmodulated".into());
    }

    let units_per_mm = cfg.units_per_mm(icon);
    let mut work = icon.clone();
    let mut skipped = 0usize;

    if geometry_active || color_active {
        // merging near-tangent joints only matters when the geometry gets
        // refit; otherwise convert exactly
        let alpha = if geometry_active { cfg.alpha_deg } else { 0.0 };

        let geo = if geometry_active {
            let period_mm =
                model.level_to_stimulus(Variable::GeomFreq, params.geom_freq, Some(params.shape))?;
            let ampl_mm =
                model.level_to_stimulus(Variable::GeomAmpl, params.geom_ampl, Some(params.shape))?;
            let field = DistanceField::build(
                &icon.curves,
                icon.width.round().max(2.0) as usize,
                icon.height.round().max(2.0) as usize,
            )?;
            Some((
                WaveSpec {
                    shape: params.shape,
                    period_length: period_mm * units_per_mm,
                    amplitude: ampl_mm * units_per_mm,
                },
                field,
            ))
        } else {
            None
        };

        let color = if color_active {
            let period_mm = model.level_to_stimulus(Variable::ColorFreq, params.color_freq, None)?;
            let target_lum = model.level_to_stimulus(Variable::ColorAmpl, params.color_ampl, None)?;
            Some(ColorWaveSpec {
                period_length: period_mm * units_per_mm,
                amplitude_luminance: target_lum,
                side: cfg.color_side,
            })
        } else {
            None
        };

        // refit tolerance scales with the canvas
        let mut fit = cfg.fit.clone();
        fit.tol *= (icon.width.max(icon.height) / 512.0).max(0.1);

        for (ci, curve) in work.curves.iter_mut().enumerate() {
            if curve.barrier {
                continue;
            }
            let mut spline = bezier_to_bspline(curve, alpha).map_err(|e| match e {
                Error::Validation(msg) => Error::curve(ci, msg),
                other => other,
            })?;
            if let Some((spec, field)) = &geo {
                match modulate_geometry(&spline, spec, field, cfg.epsilon_px, &fit)? {
                    Modulated::Yes(c) => spline = c,
                    Modulated::Skipped(reason) => {
                        skipped += 1;
                        warnings.push(format!("curve {ci}: geometry skipped: {reason}"));
                    }
                }
            }
            if let Some(spec) = &color {
                match place_color_intervals(&spline, spec, cfg.background)? {
                    Modulated::Yes(c) => spline = c,
                    Modulated::Skipped(reason) => {
                        warnings.push(format!("curve {ci}: color skipped: {reason}"));
                    }
                }
            }
            let mut back = bspline_to_bezier(&spline)?;
            back.barrier = curve.barrier;
            back.barrier_side = curve.barrier_side;
            *curve = back;
        }
    }

    let (with_margin, outcome) =
        crate::coloring::build_margin_barrier(&work, params.margin_width)?;
    if params.margin_width.is_finite()
        && matches!(outcome, crate::coloring::MarginOutcome::Unchanged)
    {
        warnings.push("margin width exceeds the icon's interior; whole icon is contour".into());
    }
    work = with_margin;

    if let Some(rgb) = params.inner_color {
        if !matches!(outcome, crate::coloring::MarginOutcome::Added(_)) {
            return Err(Error::validation(
                "inner color requires a finite margin that fits the icon",
            ));
        }
        work = set_inner_color_rgb(&work, rgb)?;
    }

    work.validate()?;
    Ok(GlyphOutcome {
        dci: work,
        warnings,
        skipped_curves: skipped,
    })
}

fn check_levels(params: &GlyphParams, model: &PerceptualModel) -> Result<()> {
    for (level, var) in [
        (params.geom_freq, Variable::GeomFreq),
        (params.geom_ampl, Variable::GeomAmpl),
        (params.color_freq, Variable::ColorFreq),
        (params.color_ampl, Variable::ColorAmpl),
    ] {
        let max = model.levels(var);
        if level > max {
            return Err(Error::validation(format!(
                "{} level {level} exceeds the model's {max} levels",
                var.name()
            )));
        }
    }
    Ok(())
}

/// Apply parameters and rasterize in one go.
pub fn render_params(
    icon: &DiffusionCurveImage,
    params: &GlyphParams,
    model: &PerceptualModel,
    cfg: &PipelineConfig,
) -> Result<(RasterImage, DiffusionReport, GlyphOutcome)> {
    let outcome = apply_glyph_params(icon, params, model, cfg)?;
    let (img, report) = render_glyph(&outcome.dci, cfg.render_px())?;
    Ok((img, report, outcome))
}
