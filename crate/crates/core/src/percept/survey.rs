//! Survey records and the model-building pipeline: parse, filter outliers,
//! fit transfers and level distributions, quantize, calibrate shapes.
//!
//! CSV format, one answer per row:
//! `participant,experiment,variable,stimulus,second_stimulus,response`
//! where `experiment` names the experiment kind (`Ampl1`, `Freq2`,
//! `SawtAmpl`, `ColFreq1`, ...), `stimulus` is the presented magnitude in
//! adu, `second_stimulus` is the other parameter's value (prefixed with `F`
//! when it was fixed by design, e.g. `F6`), and `response` is the perceived
//! magnitude the participant assigned.

use super::{
    chebyshev_filter, fit_level_distribution, fit_shape_calibration, fit_transfer, quantize,
    Aspect, CiRecord, PerceptualModel, ShapeCalibration, Variable,
};
use crate::dci::WaveShape;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Survey experiment kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Ampl1,
    Ampl2,
    Freq1,
    Freq2,
    SawtAmpl,
    RectAmpl,
    SawtFreq,
    RectFreq,
    ColAmpl1,
    ColAmpl2,
    ColFreq1,
    ColFreq2,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Experiment> {
        use Experiment::*;
        Ok(match s {
            "Ampl1" => Ampl1,
            "Ampl2" => Ampl2,
            "Freq1" => Freq1,
            "Freq2" => Freq2,
            "SawtAmpl" => SawtAmpl,
            "RectAmpl" => RectAmpl,
            "SawtFreq" => SawtFreq,
            "RectFreq" => RectFreq,
            "ColAmpl1" => ColAmpl1,
            "ColAmpl2" => ColAmpl2,
            "ColFreq1" => ColFreq1,
            "ColFreq2" => ColFreq2,
            other => {
                return Err(Error::validation(format!(
                    "unknown experiment kind \"{other}\""
                )))
            }
        })
    }

    pub fn variable(&self) -> Variable {
        use Experiment::*;
        match self {
            Ampl1 | Ampl2 | SawtAmpl | RectAmpl => Variable::GeomAmpl,
            Freq1 | Freq2 | SawtFreq | RectFreq => Variable::GeomFreq,
            ColAmpl1 | ColAmpl2 => Variable::ColorAmpl,
            ColFreq1 | ColFreq2 => Variable::ColorFreq,
        }
    }

    /// Magnitude-estimation experiments feed the transfer and quantization.
    pub fn is_magnitude(&self) -> bool {
        use Experiment::*;
        matches!(
            self,
            Ampl1 | Ampl2 | Freq1 | Freq2 | ColAmpl1 | ColAmpl2 | ColFreq1 | ColFreq2
        )
    }

    /// Shape-calibration experiments map a sinusoidal reference magnitude to
    /// the shape magnitude selected as perceptually closest.
    pub fn calibration(&self) -> Option<(WaveShape, Aspect)> {
        use Experiment::*;
        match self {
            SawtAmpl => Some((WaveShape::Sawtooth, Aspect::Amplitude)),
            RectAmpl => Some((WaveShape::Rectangular, Aspect::Amplitude)),
            SawtFreq => Some((WaveShape::Sawtooth, Aspect::Frequency)),
            RectFreq => Some((WaveShape::Rectangular, Aspect::Frequency)),
            _ => None,
        }
    }

    pub fn stimulus_range(&self) -> (f64, f64) {
        self.variable().survey_stimulus_range()
    }
}

/// Second-stimulus column value: fixed by the experiment design or randomly
/// drawn per question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecondStimulus {
    Fixed(f64),
    Random(f64),
}

/// One participant answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub participant: String,
    pub experiment: Experiment,
    pub variable: Variable,
    pub stimulus: f64,
    pub second_stimulus: Option<SecondStimulus>,
    pub response: f64,
}

impl SurveyRecord {
    pub fn validate(&self, row: usize) -> Result<()> {
        if self.experiment.variable() != self.variable {
            return Err(Error::validation(format!(
                "row {row}: experiment {:?} does not belong to variable {}",
                self.experiment,
                self.variable.name()
            )));
        }
        let (lo, hi) = self.experiment.stimulus_range();
        if self.stimulus < lo - 1e-9 || self.stimulus > hi + 1e-9 {
            return Err(Error::validation(format!(
                "row {row}: stimulus {} outside declared range [{lo}, {hi}]",
                self.stimulus
            )));
        }
        Ok(())
    }
}

pub fn parse_survey_csv(text: &str) -> Result<Vec<SurveyRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("survey CSV is missing column \"{name}\"")))
    };
    let (c_part, c_exp, c_var, c_stim, c_second, c_resp) = (
        col("participant")?,
        col("experiment")?,
        col("variable")?,
        col("stimulus")?,
        col("second_stimulus")?,
        col("response")?,
    );

    let parse_num = |s: &str, what: &str, row: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::validation(format!("row {row}: bad {what} \"{s}\"")))
    };

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2; // header is row 1
        let second_raw = rec.get(c_second).unwrap_or("");
        let second = if second_raw.is_empty() {
            None
        } else if let Some(rest) = second_raw.strip_prefix(['F', 'f']) {
            Some(SecondStimulus::Fixed(parse_num(rest, "second_stimulus", row)?))
        } else {
            Some(SecondStimulus::Random(parse_num(
                second_raw,
                "second_stimulus",
                row,
            )?))
        };
        let record = SurveyRecord {
            participant: rec.get(c_part).unwrap_or("").to_string(),
            experiment: Experiment::parse(rec.get(c_exp).unwrap_or(""))?,
            variable: rec.get(c_var).unwrap_or("").parse()?,
            stimulus: parse_num(rec.get(c_stim).unwrap_or(""), "stimulus", row)?,
            second_stimulus: second,
            response: parse_num(rec.get(c_resp).unwrap_or(""), "response", row)?,
        };
        record.validate(row)?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::validation("survey CSV contains no records"));
    }
    Ok(out)
}

pub fn load_survey_csv(path: impl AsRef<Path>) -> Result<Vec<SurveyRecord>> {
    parse_survey_csv(&std::fs::read_to_string(path)?)
}

/// Per-variable summary of a calibration run.
#[derive(Debug, Clone)]
pub struct VariableReport {
    pub variable: Variable,
    pub records: usize,
    pub outliers: usize,
    pub transfer: super::TransferFit,
    pub cis: Vec<CiRecord>,
    pub delta_v: f64,
    pub levels: u32,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationReport {
    pub variables: Vec<VariableReport>,
    pub calibrations: Vec<(ShapeCalibration, usize)>,
    pub notes: Vec<String>,
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "calibration report");
        let _ = writeln!(s, "==================");
        for v in &self.variables {
            let _ = writeln!(s, "\n[{}]", v.variable.name());
            let _ = writeln!(
                s,
                "  records: {}   outliers removed: {} ({:.1}%)",
                v.records,
                v.outliers,
                100.0 * v.outliers as f64 / v.records.max(1) as f64
            );
            let _ = writeln!(
                s,
                "  transfer g(x) = {:.4} * x^{:.4} + {:.4}   (rms {:.4})",
                v.transfer.a, v.transfer.b, v.transfer.c, v.transfer.residual
            );
            let _ = writeln!(s, "  level CIs (stimulus -> mean, width, model):");
            for ci in &v.cis {
                let _ = writeln!(
                    s,
                    "    {:>5.2} -> {:>6.3}  {:>6.3}  {:?}",
                    ci.stimulus,
                    ci.mean,
                     2.0 * ci.half_width,
                    ci.model
                );
            }
            let _ = writeln!(
                s,
                "  quantization step dv = {:.3}   levels = {}",
                v.delta_v, v.levels
            );
            for n in &v.notes {
                let _ = writeln!(s, "  note: {n}");
            }
        }
        if !self.calibrations.is_empty() {
            let _ = writeln!(s, "\nshape calibrations h(x) = k*x + l");
            for (c, n) in &self.calibrations {
                let _ = writeln!(
                    s,
                    "  {} {:?}: k = {:.4}, l = {:.4}   ({} selections)",
                    c.shape, c.aspect, c.k, c.l, n
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

pub const FILTER_P1: f64 = 0.375;
pub const FILTER_P2: f64 = 0.175;

/// Build a perceptual model from survey records: outlier filtering, transfer
/// fit, per-level distribution fits, quantization, and shape calibration.
/// Stimulus anchors come from the experiment design and stay fixed.
pub fn build_model(records: &[SurveyRecord]) -> Result<(PerceptualModel, CalibrationReport)> {
    if records.is_empty() {
        return Err(Error::validation("no survey records"));
    }
    let mut model = PerceptualModel::default_model();
    let mut report = CalibrationReport::default();

    for var in Variable::ALL {
        let pairs: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.variable == var && r.experiment.is_magnitude())
            .map(|r| (r.stimulus, r.response))
            .collect();
        if pairs.is_empty() {
            return Err(Error::validation(format!(
                "survey has no magnitude records for {}",
                var.name()
            )));
        }
        let (kept, outliers) = chebyshev_filter(&pairs, FILTER_P1, FILTER_P2)?;
        let transfer = fit_transfer(&kept)?;

        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &(s, r) in &kept {
            groups.entry(s.to_bits()).or_default().push(r);
        }
        let mut cis = Vec::new();
        let mut notes = Vec::new();
        for (bits, responses) in &groups {
            let stimulus = f64::from_bits(*bits);
            match fit_level_distribution(responses) {
                Ok(fit) => cis.push(CiRecord {
                    stimulus,
                    mean: fit.mean,
                    half_width: fit.ci_half_width,
                    model: fit.model,
                }),
                Err(e) => notes.push(format!("stimulus {stimulus}: {e}")),
            }
        }
        let quantization = quantize(&cis, var.perceived_range())?;

        report.variables.push(VariableReport {
            variable: var,
            records: pairs.len(),
            outliers: outliers.len(),
            transfer,
            cis: cis.clone(),
            delta_v: quantization.delta_v,
            levels: quantization.levels,
            notes,
        });

        let vm = match var {
            Variable::GeomAmpl => &mut model.geom_ampl,
            Variable::GeomFreq => &mut model.geom_freq,
            Variable::ColorAmpl => &mut model.color_ampl,
            Variable::ColorFreq => &mut model.color_freq,
        };
        vm.transfer = transfer;
        vm.quantization = quantization;
        vm.stimulus_adu_range = var.survey_stimulus_range();
    }

    model.shape_calibrations.clear();
    for (shape, aspect) in [
        (WaveShape::Rectangular, Aspect::Amplitude),
        (WaveShape::Rectangular, Aspect::Frequency),
        (WaveShape::Sawtooth, Aspect::Amplitude),
        (WaveShape::Sawtooth, Aspect::Frequency),
    ] {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.experiment.calibration() == Some((shape, aspect)))
            .map(|r| (r.stimulus, r.response))
            .collect();
        let cal = if pts.len() >= 3 {
            match fit_shape_calibration(&pts) {
                Ok((k, l)) => ShapeCalibration {
                    shape,
                    aspect,
                    k,
                    l,
                },
                Err(e) => {
                    report
                        .notes
                        .push(format!("{shape} {aspect:?} calibration failed: {e}; using identity"));
                    ShapeCalibration {
                        shape,
                        aspect,
                        k: 1.0,
                        l: 0.0,
                    }
                }
            }
        } else {
            report.notes.push(format!(
                "{shape} {aspect:?}: no calibration data; using identity"
            ));
            ShapeCalibration {
                shape,
                aspect,
                k: 1.0,
                l: 0.0,
            }
        };
        report.calibrations.push((cal, pts.len()));
        model.shape_calibrations.push(cal);
    }

    model.validate()?;
    Ok((model, report))
}
