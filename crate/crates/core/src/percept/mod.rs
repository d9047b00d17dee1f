//! The perceptual model: stimulus-to-perception transfer, quantization into
//! readable levels, shape calibration, size transfer, and the adu/stimulus
//! mapping for every visual variable.
//!
//! Variables live on two scales. The *stimulus* scale is physical
//! (millimeters for geometry and period lengths, luminance for color
//! amplitude) and is communicated in adu, arbitrary digital units, through a
//! linear anchor map. The *perceived* scale is what participants reported;
//! the transfer function `g(x) = a*x^b + c` maps stimulus adu to perceived
//! adu. Quantization finds the largest 50% confidence interval of the
//! perceived responses and uses it as the level step.

mod filter;
mod fit;
mod survey;

pub use filter::chebyshev_filter;
pub use fit::{
    fit_level_distribution, fit_shape_calibration, fit_transfer, CiModel, LevelFit,
};
pub use survey::{
    build_model, load_survey_csv, parse_survey_csv, CalibrationReport, SecondStimulus,
    SurveyRecord,
};

use crate::dci::WaveShape;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The four survey-calibrated visual variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    GeomAmpl,
    GeomFreq,
    ColorAmpl,
    ColorFreq,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::GeomAmpl,
        Variable::GeomFreq,
        Variable::ColorAmpl,
        Variable::ColorFreq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variable::GeomAmpl => "geom_ampl",
            Variable::GeomFreq => "geom_freq",
            Variable::ColorAmpl => "col_ampl",
            Variable::ColorFreq => "col_freq",
        }
    }

    /// Width of the perceived scale used in the survey.
    pub fn perceived_range(&self) -> (f64, f64) {
        match self {
            Variable::GeomAmpl | Variable::GeomFreq => (0.0, 12.0),
            Variable::ColorAmpl | Variable::ColorFreq => (0.0, 5.0),
        }
    }

    /// Stimulus adu range presented in the survey.
    pub fn survey_stimulus_range(&self) -> (f64, f64) {
        match self {
            Variable::GeomAmpl | Variable::GeomFreq => (2.0, 10.0),
            Variable::ColorAmpl | Variable::ColorFreq => (1.0, 5.0),
        }
    }
}

impl std::str::FromStr for Variable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geom_ampl" => Ok(Variable::GeomAmpl),
            "geom_freq" => Ok(Variable::GeomFreq),
            "col_ampl" | "color_ampl" => Ok(Variable::ColorAmpl),
            "col_freq" | "color_freq" => Ok(Variable::ColorFreq),
            other => Err(Error::validation(format!("unknown variable \"{other}\""))),
        }
    }
}

/// Linear adu-to-stimulus anchor map. For frequency variables the stimulus is
/// the period length, which decreases as the adu value (frequency) grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusAnchors {
    pub v_min: f64,
    pub v_max: f64,
    /// Physical stimulus at `v_min`.
    pub s_at_vmin: f64,
    /// Physical stimulus at `v_max`.
    pub s_at_vmax: f64,
}

impl StimulusAnchors {
    fn slope(&self) -> f64 {
        (self.s_at_vmax - self.s_at_vmin) / (self.v_max - self.v_min)
    }

    pub fn stimulus_unchecked(&self, v: f64) -> f64 {
        self.s_at_vmin + (v - self.v_min) * self.slope()
    }

    pub fn adu_unchecked(&self, s: f64) -> f64 {
        self.v_min + (s - self.s_at_vmin) / self.slope()
    }

    /// adu to physical stimulus with range check.
    pub fn stimulus(&self, v: f64) -> Result<f64> {
        if v < self.v_min - 1e-9 || v > self.v_max + 1e-9 {
            return Err(Error::Domain {
                u: v,
                lo: self.v_min,
                hi: self.v_max,
            });
        }
        Ok(self.stimulus_unchecked(v))
    }

    /// Physical stimulus to adu with range check.
    pub fn adu(&self, s: f64) -> Result<f64> {
        let (lo, hi) = if self.s_at_vmin < self.s_at_vmax {
            (self.s_at_vmin, self.s_at_vmax)
        } else {
            (self.s_at_vmax, self.s_at_vmin)
        };
        if s < lo - 1e-9 || s > hi + 1e-9 {
            return Err(Error::Domain { u: s, lo, hi });
        }
        Ok(self.adu_unchecked(s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_max <= self.v_min || self.s_at_vmin == self.s_at_vmax {
            return Err(Error::validation("stimulus anchors must be strictly monotone"));
        }
        Ok(())
    }
}

/// Stevens-style stimulus-to-perception transfer `g(x) = a*x^b + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub domain: (f64, f64),
    pub residual: f64,
}

impl TransferFit {
    pub fn linear(x_range: (f64, f64), v_range: (f64, f64)) -> Self {
        let a = (v_range.1 - v_range.0) / (x_range.1 - x_range.0);
        TransferFit {
            a,
            b: 1.0,
            c: v_range.0 - a * x_range.0,
            domain: x_range,
            residual: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a * x.max(1e-9).powf(self.b) + self.c
    }

    /// Inverse of the monotone increasing transfer.
    pub fn invert(&self, v: f64) -> f64 {
        let base = ((v - self.c) / self.a).max(1e-12);
        base.powf(1.0 / self.b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !(self.a > 0.0) {
            return Err(Error::validation(format!(
                "transfer must be increasing (a={}, b={})",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// One per-level 50% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiRecord {
    pub stimulus: f64,
    pub mean: f64,
    pub half_width: f64,
    pub model: CiModel,
}

/// Quantization of one variable's perceived scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub delta_v: f64,
    pub perceived_range: (f64, f64),
    pub levels: u32,
    #[serde(default)]
    pub cis: Vec<CiRecord>,
}

/// The level step is the largest per-level 50% confidence interval; the level
/// count is how many such steps fit the perceived range.
pub fn quantize(cis: &[CiRecord], perceived_range: (f64, f64)) -> Result<Quantization> {
    if cis.len() < 2 {
        return Err(Error::validation("quantization needs at least 2 level CIs"));
    }
    let delta_v = cis
        .iter()
        .map(|c| 2.0 * c.half_width)
        .fold(0.0f64, f64::max);
    quantize_with_step(delta_v, perceived_range, cis.to_vec())
}

pub fn quantize_with_step(
    delta_v: f64,
    perceived_range: (f64, f64),
    cis: Vec<CiRecord>,
) -> Result<Quantization> {
    let width = perceived_range.1 - perceived_range.0;
    if !(delta_v > 0.0) || delta_v >= width {
        return Err(Error::validation(format!(
            "variable not quantizable at this size: step {delta_v:.3} vs range width {width:.3}"
        )));
    }
    Ok(Quantization {
        delta_v,
        perceived_range,
        levels: (width / delta_v).floor() as u32,
        cis,
    })
}

/// Linear calibration `h(x) = k*x + l` aligning a shape's stimulus magnitude
/// to the perceptually equivalent sinusoidal magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeCalibration {
    pub shape: WaveShape,
    pub aspect: Aspect,
    pub k: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Amplitude,
    Frequency,
}

/// Size-transfer record of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeTransfer {
    pub omega: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub epsilon_slack: f64,
}

impl SizeTransfer {
    pub fn identity() -> Self {
        SizeTransfer {
            omega: 1.0,
            omega_min: 1.0,
            omega_max: 1.0,
            epsilon_slack: 0.0,
        }
    }
}

/// Scaling pair for one variable when transferring to a smaller glyph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePair {
    pub omega_min: f64,
    pub omega_max: f64,
}

/// Per-variable scaling choices for a size transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeTransferSpec {
    pub omega: f64,
    pub geom_ampl: ScalePair,
    pub geom_freq: ScalePair,
    pub color_freq: ScalePair,
}

impl SizeTransferSpec {
    /// Pure scaling: every bound scales by `omega`.
    pub fn uniform(omega: f64) -> Self {
        let p = ScalePair {
            omega_min: omega,
            omega_max: omega,
        };
        SizeTransferSpec {
            omega,
            geom_ampl: p,
            geom_freq: p,
            color_freq: p,
        }
    }

    /// Shipped defaults: minima scale moderately (never below 0.558 of the
    /// original), maxima get per-variable slack on top of `omega`.
    pub fn defaults_for(omega: f64) -> Self {
        let omega_min = 0.558f64.max(omega).min(1.0);
        let pair = |eps: f64| ScalePair {
            omega_min,
            omega_max: (omega + eps).min(1.0),
        };
        SizeTransferSpec {
            omega,
            geom_ampl: pair(0.34),
            geom_freq: pair(0.11),
            color_freq: pair(0.11),
        }
    }

    fn pair(&self, var: Variable) -> Option<ScalePair> {
        match var {
            Variable::GeomAmpl => Some(self.geom_ampl),
            Variable::GeomFreq => Some(self.geom_freq),
            Variable::ColorFreq => Some(self.color_freq),
            Variable::ColorAmpl => None,
        }
    }
}

/// Everything the glyph pipeline needs to know about one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableModel {
    pub anchors: StimulusAnchors,
    /// Stimulus adu range the quantization's perceived range corresponds to.
    pub stimulus_adu_range: (f64, f64),
    pub transfer: TransferFit,
    pub quantization: Quantization,
    pub size: SizeTransfer,
}

impl VariableModel {
    fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        self.transfer.validate()?;
        let w = self.quantization.perceived_range.1 - self.quantization.perceived_range.0;
        let expect = (w / self.quantization.delta_v).floor() as u32;
        if self.quantization.levels != expect {
            return Err(Error::validation(format!(
                "level count {} does not match floor({w:.3}/{:.3})",
                self.quantization.levels, self.quantization.delta_v
            )));
        }
        Ok(())
    }
}

const MODEL_VERSION: u32 = 1;

/// Per-variable transfer fits, quantizations, shape calibrations and size
/// transfer, serializable as a versioned JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualModel {
    pub version: u32,
    pub geom_ampl: VariableModel,
    pub geom_freq: VariableModel,
    pub color_ampl: VariableModel,
    pub color_freq: VariableModel,
    pub shape_calibrations: Vec<ShapeCalibration>,
}

impl PerceptualModel {
    pub fn variable(&self, var: Variable) -> &VariableModel {
        match var {
            Variable::GeomAmpl => &self.geom_ampl,
            Variable::GeomFreq => &self.geom_freq,
            Variable::ColorAmpl => &self.color_ampl,
            Variable::ColorFreq => &self.color_freq,
        }
    }

    fn variable_mut(&mut self, var: Variable) -> &mut VariableModel {
        match var {
            Variable::GeomAmpl => &mut self.geom_ampl,
            Variable::GeomFreq => &mut self.geom_freq,
            Variable::ColorAmpl => &mut self.color_ampl,
            Variable::ColorFreq => &mut self.color_freq,
        }
    }

    pub fn levels(&self, var: Variable) -> u32 {
        self.variable(var).quantization.levels
    }

    /// adu to physical stimulus (mm, or luminance for the color amplitude).
    pub fn stimulus(&self, var: Variable, adu: f64) -> Result<f64> {
        self.variable(var).anchors.stimulus(adu)
    }

    /// Physical stimulus to adu.
    pub fn adu_of(&self, var: Variable, stimulus: f64) -> Result<f64> {
        self.variable(var).anchors.adu(stimulus)
    }

    /// Perceived-scale center of a quantized level (1-based).
    pub fn level_center_perceived(&self, var: Variable, level: u32) -> Result<f64> {
        let q = &self.variable(var).quantization;
        if level == 0 || level > q.levels {
            return Err(Error::validation(format!(
                "{} level {level} outside 1..={}",
                var.name(),
                q.levels
            )));
        }
        Ok(q.perceived_range.0 + (level as f64 - 0.5) * q.delta_v)
    }

    /// Physical stimulus realizing a quantized level, optionally calibrated
    /// for a non-sinusoidal shape.
    pub fn level_to_stimulus(
        &self,
        var: Variable,
        level: u32,
        shape: Option<WaveShape>,
    ) -> Result<f64> {
        let vm = self.variable(var);
        let v = self.level_center_perceived(var, level)?;
        let mut x = vm.transfer.invert(v);
        let (xlo, xhi) = vm.stimulus_adu_range;
        x = x.clamp(xlo.min(xhi), xlo.max(xhi));
        if let Some(shape) = shape {
            if !matches!(shape, WaveShape::Sinusoidal) {
                let aspect = match var {
                    Variable::GeomAmpl => Some(Aspect::Amplitude),
                    Variable::GeomFreq => Some(Aspect::Frequency),
                    _ => None,
                };
                if let Some(aspect) = aspect {
                    if let Some(cal) = self
                        .shape_calibrations
                        .iter()
                        .find(|c| c.shape == shape && c.aspect == aspect)
                    {
                        x = cal.k * x + cal.l;
                    }
                }
            }
        }
        let s = vm.anchors.stimulus_unchecked(x);
        Ok(if matches!(var, Variable::ColorAmpl) {
            s.clamp(0.0, 1.0)
        } else {
            s.max(0.0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        for var in Variable::ALL {
            self.variable(var).validate()?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serialization cannot fail");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PerceptualModel> {
        let text = std::fs::read_to_string(path)?;
        let model: PerceptualModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        if model.version != MODEL_VERSION {
            return Err(Error::validation(format!(
                "model file version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    /// The shipped default model: published quantization steps and stimulus
    /// anchors with a linear transfer placeholder, so the glyph pipeline
    /// works without raw survey data.
    pub fn default_model() -> PerceptualModel {
        let var = |anchors: StimulusAnchors, survey: (f64, f64), perceived: (f64, f64), dv: f64| {
            VariableModel {
                anchors,
                stimulus_adu_range: survey,
                transfer: TransferFit::linear(survey, perceived),
                quantization: quantize_with_step(dv, perceived, Vec::new())
                    .expect("default steps are quantizable"),
                size: SizeTransfer::identity(),
            }
        };
        let model = PerceptualModel {
            version: MODEL_VERSION,
            geom_ampl: var(
                StimulusAnchors {
                    v_min: 1.0,
                    v_max: 12.0,
                    s_at_vmin: 0.1,
                    s_at_vmax: 1.2,
                },
                (2.0, 10.0),
                (0.0, 12.0),
                2.91,
            ),
            geom_freq: var(
                StimulusAnchors {
                    v_min: 1.0,
                    v_max: 12.0,
                    s_at_vmin: 5.1,
                    s_at_vmax: 0.8,
                },
                (2.0, 10.0),
                (0.0, 12.0),
                2.01,
            ),
            color_ampl: var(
                StimulusAnchors {
                    v_min: 1.0,
                    v_max: 5.0,
                    s_at_vmin: 0.425,
                    s_at_vmax: 0.85,
                },
                (1.0, 5.0),
                (0.0, 5.0),
                1.23,
            ),
            color_freq: var(
                StimulusAnchors {
                    v_min: 1.0,
                    v_max: 5.0,
                    s_at_vmin: 12.1,
                    s_at_vmax: 5.9,
                },
                (1.0, 5.0),
                (0.0, 5.0),
                1.14,
            ),
            shape_calibrations: [
                (WaveShape::Rectangular, Aspect::Amplitude),
                (WaveShape::Rectangular, Aspect::Frequency),
                (WaveShape::Sawtooth, Aspect::Amplitude),
                (WaveShape::Sawtooth, Aspect::Frequency),
            ]
            .into_iter()
            .map(|(shape, aspect)| ShapeCalibration {
                shape,
                aspect,
                k: 1.0,
                l: 0.0,
            })
            .collect(),
        };
        debug_assert!(model.validate().is_ok());
        model
    }

    /// Transfer the quantization to a glyph scaled by `omega` relative to the
    /// calibrated size. Color amplitude stays untouched; for the other
    /// variables the stimulus range shrinks to
    /// `[omega_min * s(v_min), omega_max * s(v_max)]` while the perceived
    /// step is preserved, which reduces the level count. Returns the scaled
    /// model and human-readable notes (including disabled variables).
    pub fn size_transferred(
        &self,
        spec: &SizeTransferSpec,
    ) -> Result<(PerceptualModel, Vec<String>)> {
        let omega = spec.omega;
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::validation(format!(
                "relative scale omega={omega} must be in (0, 1]"
            )));
        }
        let mut out = self.clone();
        let mut notes = Vec::new();
        for var in Variable::ALL {
            let Some(pair) = spec.pair(var) else {
                notes.push(format!("{}: luminance amplitude not scaled", var.name()));
                continue;
            };
            if pair.omega_min < omega - 1e-12 || pair.omega_max > 1.0 + 1e-12 {
                return Err(Error::validation(format!(
                    "{}: scale pair ({}, {}) must satisfy omega_min >= omega and omega_max <= 1",
                    var.name(),
                    pair.omega_min,
                    pair.omega_max
                )));
            }
            let vm = out.variable_mut(var);
            let (xlo, xhi) = vm.stimulus_adu_range;
            let s_lo = vm.anchors.stimulus_unchecked(xlo) * pair.omega_min;
            let s_hi = vm.anchors.stimulus_unchecked(xhi) * pair.omega_max;
            let xlo2 = vm.anchors.adu_unchecked(s_lo).max(1e-6);
            let xhi2 = vm.anchors.adu_unchecked(s_hi).max(1e-6);
            let v_lo = vm.transfer.eval(xlo2);
            let v_hi = vm.transfer.eval(xhi2);
            let width = v_hi - v_lo;
            let dv = vm.quantization.delta_v;
            vm.size = SizeTransfer {
                omega,
                omega_min: pair.omega_min,
                omega_max: pair.omega_max,
                epsilon_slack: pair.omega_max - omega,
            };
            vm.stimulus_adu_range = (xlo2, xhi2);
            if width < dv {
                vm.quantization.levels = 0;
                vm.quantization.perceived_range = (v_lo, v_hi);
                notes.push(format!(
                    "{}: disabled at this size (usable range {width:.2} below step {dv:.2})",
                    var.name()
                ));
                log::warn!("{}", notes.last().unwrap());
                continue;
            }
            let levels = (width / dv).floor() as u32;
            vm.quantization.perceived_range = (v_lo, v_hi);
            vm.quantization.levels = levels;
            notes.push(format!(
                "{}: {} levels over perceived range [{v_lo:.2}, {v_hi:.2}]",
                var.name(),
                levels
            ));
        }
        Ok((out, notes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_levels_match_published_steps() {
        let m = PerceptualModel::default_model();
        assert_eq!(m.levels(Variable::GeomAmpl), 4);
        assert_eq!(m.levels(Variable::GeomFreq), 5);
        assert_eq!(m.levels(Variable::ColorAmpl), 4);
        assert_eq!(m.levels(Variable::ColorFreq), 4);
    }

    #[test]
    fn anchor_endpoints() {
        let m = PerceptualModel::default_model();
        assert!((m.stimulus(Variable::GeomAmpl, 1.0).unwrap() - 0.1).abs() < 1e-12);
        assert!((m.stimulus(Variable::GeomAmpl, 12.0).unwrap() - 1.2).abs() < 1e-12);
        assert!((m.stimulus(Variable::ColorAmpl, 5.0).unwrap() - 0.85).abs() < 1e-12);
        // frequency maps adu to period length, decreasing
        assert!((m.stimulus(Variable::GeomFreq, 12.0).unwrap() - 0.8).abs() < 1e-12);
        assert!((m.stimulus(Variable::GeomFreq, 1.0).unwrap() - 5.1).abs() < 1e-12);
    }

    #[test]
    fn anchor_interpolation_and_round_trip() {
        let m = PerceptualModel::default_model();
        assert!((m.stimulus(Variable::GeomAmpl, 6.5).unwrap() - 0.65).abs() < 1e-12);
        for var in Variable::ALL {
            let (lo, hi) = (m.variable(var).anchors.v_min, m.variable(var).anchors.v_max);
            for i in 0..=10 {
                let v = lo + (hi - lo) * i as f64 / 10.0;
                let s = m.stimulus(var, v).unwrap();
                assert!((m.adu_of(var, s).unwrap() - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_adu_is_error() {
        let m = PerceptualModel::default_model();
        assert!(m.stimulus(Variable::ColorAmpl, 6.0).is_err());
        assert!(m.stimulus(Variable::GeomAmpl, 0.5).is_err());
    }

    #[test]
    fn quantize_published_rows() {
        let mk = |dv: f64, w: f64| quantize_with_step(dv, (0.0, w), Vec::new()).unwrap().levels;
        assert_eq!(mk(2.91, 12.0), 4);
        assert_eq!(mk(2.01, 12.0), 5);
        assert_eq!(mk(1.23, 5.0), 4);
        assert_eq!(mk(1.14, 5.0), 4);
    }

    #[test]
    fn quantize_rejects_oversized_step() {
        assert!(quantize_with_step(6.0, (0.0, 5.0), Vec::new()).is_err());
    }

    #[test]
    fn level_centers_have_disjoint_cis() {
        // adjacent level centers are delta_v apart, so 50% CIs of half-width
        // at most delta_v/2 cannot overlap
        let m = PerceptualModel::default_model();
        for var in Variable::ALL {
            let q = &m.variable(var).quantization;
            for j in 1..q.levels {
                let a = m.level_center_perceived(var, j).unwrap();
                let b = m.level_center_perceived(var, j + 1).unwrap();
                assert!((b - a) - q.delta_v < 1e-12);
                assert!(a + q.delta_v / 2.0 <= b - q.delta_v / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn uniform_size_transfer_at_one_is_identity() {
        let m = PerceptualModel::default_model();
        let (scaled, _) = m.size_transferred(&SizeTransferSpec::uniform(1.0)).unwrap();
        for var in Variable::ALL {
            assert_eq!(scaled.levels(var), m.levels(var));
            let a = scaled.variable(var).quantization.perceived_range;
            let b = m.variable(var).quantization.perceived_range;
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn published_scale_pairs_reproduce_small_glyph_levels() {
        let m = PerceptualModel::default_model();
        let spec = SizeTransferSpec {
            omega: 16.0 / 50.0,
            geom_ampl: ScalePair {
                omega_min: 0.558,
                omega_max: 0.66,
            },
            geom_freq: ScalePair {
                omega_min: 0.558,
                omega_max: 0.43,
            },
            color_freq: ScalePair {
                omega_min: 0.558,
                omega_max: 0.43,
            },
        };
        let (scaled, _) = m.size_transferred(&spec).unwrap();
        assert_eq!(scaled.levels(Variable::ColorAmpl), 4, "unchanged");
        // reference level counts are 3 for the scaled variables; the linear
        // placeholder transfer lands within one level of them
        for (var, reference) in [
            (Variable::GeomAmpl, 3i64),
            (Variable::GeomFreq, 3),
            (Variable::ColorFreq, 3),
        ] {
            let got = scaled.levels(var) as i64;
            assert!((got - reference).abs() <= 1, "{}: {got}", var.name());
            assert!(got <= m.levels(var) as i64);
        }
    }

    #[test]
    fn level_counts_monotone_in_omega_max() {
        let m = PerceptualModel::default_model();
        let mut prev = u32::MAX;
        for i in (1..=10).rev() {
            let omega_max = i as f64 / 10.0;
            let spec = SizeTransferSpec {
                omega: 0.1,
                geom_ampl: ScalePair {
                    omega_min: 0.6,
                    omega_max,
                },
                geom_freq: ScalePair {
                    omega_min: 0.6,
                    omega_max,
                },
                color_freq: ScalePair {
                    omega_min: 0.6,
                    omega_max,
                },
            };
            let (scaled, _) = m.size_transferred(&spec).unwrap();
            let levels = scaled.levels(Variable::GeomAmpl);
            assert!(levels <= prev, "levels must not grow as omega_max shrinks");
            prev = levels;
        }
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = PerceptualModel::default_model();
        m.save(&path).unwrap();
        let back = PerceptualModel::load(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn shape_calibration_shifts_stimulus() {
        let mut m = PerceptualModel::default_model();
        m.shape_calibrations = vec![ShapeCalibration {
            shape: WaveShape::Rectangular,
            aspect: Aspect::Amplitude,
            k: 1.0,
            l: 1.0,
        }];
        let sin = m
            .level_to_stimulus(Variable::GeomAmpl, 2, Some(WaveShape::Sinusoidal))
            .unwrap();
        let rect = m
            .level_to_stimulus(Variable::GeomAmpl, 2, Some(WaveShape::Rectangular))
            .unwrap();
        // one adu of calibration shift equals 0.1 mm of amplitude
        assert!((rect - sin - 0.1).abs() < 1e-9);
    }
}
