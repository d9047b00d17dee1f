//! Mapping tabular data records onto quantized glyph parameters, plus
//! legends and batch rendering.
//!
//! A rules file is JSON:
//! ```json
//! {"rules": [
//!   {"column": "cases7", "variable": "geom_freq", "breaks": [0, 300, 900]},
//!   {"column": "beds_free", "variable": "geom_ampl",
//!    "breaks": [0, 10, 15], "levels": [3, 2, 1]}
//! ]}
//! ```
//! `breaks` define half-open intervals `[b0, b1), [b1, b2), ..., [bn, inf)`;
//! values below `b0` are out of range. Levels default to 1..n in interval
//! order; an explicit `levels` array assigns them freely (for decreasing
//! scales). Combined variables set the geometric and the color level to the
//! same index. Margin-width levels are equal-width stimulus steps over a
//! configured range; they are not survey-calibrated.

use crate::coloring::Colormap;
use crate::dci::{DiffusionCurveImage, GlyphParams, MarginWidth};
use crate::error::{Error, Result};
use crate::percept::{PerceptualModel, Variable};
use crate::pipeline::{render_params, PipelineConfig};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Data-encodable glyph variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncVariable {
    GeomFreq,
    GeomAmpl,
    ColorFreq,
    ColorAmpl,
    CombinedFreq,
    CombinedAmpl,
    InnerColor,
    MarginWidth,
}

impl EncVariable {
    pub fn name(&self) -> &'static str {
        match self {
            EncVariable::GeomFreq => "geom_freq",
            EncVariable::GeomAmpl => "geom_ampl",
            EncVariable::ColorFreq => "color_freq",
            EncVariable::ColorAmpl => "color_ampl",
            EncVariable::CombinedFreq => "combined_freq",
            EncVariable::CombinedAmpl => "combined_ampl",
            EncVariable::InnerColor => "inner_color",
            EncVariable::MarginWidth => "margin_width",
        }
    }
}

/// One data-to-level mapping.
#[derive(Debug, Clone, Deserialize)]
pub struct EncodingRule {
    pub column: String,
    pub variable: EncVariable,
    pub breaks: Vec<f64>,
    #[serde(default)]
    pub levels: Option<Vec<u32>>,
}

impl EncodingRule {
    pub fn level_count(&self) -> usize {
        self.breaks.len()
    }

    /// Level for a data value, or an error naming column and value.
    pub fn level_of(&self, value: f64) -> Result<u32> {
        if !value.is_finite() || value < self.breaks[0] {
            return Err(Error::validation(format!(
                "column \"{}\": value {value} outside all intervals",
                self.column
            )));
        }
        let idx = self.breaks.partition_point(|&b| b <= value) - 1;
        Ok(match &self.levels {
            Some(levels) => levels[idx],
            None => idx as u32 + 1,
        })
    }

    /// Human-readable interval label for a 1-based interval index.
    pub fn interval_label(&self, idx: usize) -> String {
        if idx + 1 < self.breaks.len() {
            format!("[{}, {})", self.breaks[idx], self.breaks[idx + 1])
        } else {
            format!(">= {}", self.breaks[idx])
        }
    }

    fn validate(&self, model: &PerceptualModel, margin: &MarginLevels) -> Result<()> {
        if self.breaks.is_empty() {
            return Err(Error::validation(format!(
                "rule for \"{}\" has no breakpoints",
                self.column
            )));
        }
        if self.breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "rule for \"{}\": breakpoints must be strictly increasing",
                self.column
            )));
        }
        if let Some(levels) = &self.levels {
            if levels.len() != self.breaks.len() {
                return Err(Error::validation(format!(
                    "rule for \"{}\": {} levels for {} intervals",
                    self.column,
                    levels.len(),
                    self.breaks.len()
                )));
            }
        }
        let max_level = match &self.levels {
            Some(levels) => *levels.iter().max().unwrap(),
            None => self.breaks.len() as u32,
        };
        let available = match self.variable {
            EncVariable::GeomFreq => model.levels(Variable::GeomFreq),
            EncVariable::GeomAmpl => model.levels(Variable::GeomAmpl),
            EncVariable::ColorFreq => model.levels(Variable::ColorFreq),
            EncVariable::ColorAmpl => model.levels(Variable::ColorAmpl),
            EncVariable::CombinedFreq => model
                .levels(Variable::GeomFreq)
                .min(model.levels(Variable::ColorFreq)),
            EncVariable::CombinedAmpl => model
                .levels(Variable::GeomAmpl)
                .min(model.levels(Variable::ColorAmpl)),
            EncVariable::InnerColor => u32::MAX,
            EncVariable::MarginWidth => margin.levels,
        };
        if max_level > available {
            return Err(Error::validation(format!(
                "rule for \"{}\" needs level {max_level} but {} provides only {available}",
                self.column,
                self.variable.name()
            )));
        }
        Ok(())
    }
}

/// Equal-width stimulus steps for the (uncalibrated) margin-width variable.
#[derive(Debug, Clone, Copy)]
pub struct MarginLevels {
    pub min_mm: f64,
    pub max_mm: f64,
    pub levels: u32,
}

impl Default for MarginLevels {
    fn default() -> Self {
        MarginLevels {
            min_mm: 0.8,
            max_mm: 2.4,
            levels: 3,
        }
    }
}

impl MarginLevels {
    pub fn width_mm(&self, level: u32) -> f64 {
        let step = (self.max_mm - self.min_mm) / self.levels as f64;
        self.min_mm + (level as f64 - 0.5) * step
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<EncodingRule>,
}

impl RuleSet {
    pub fn from_str_checked(
        text: &str,
        model: &PerceptualModel,
        margin: &MarginLevels,
    ) -> Result<RuleSet> {
        let set: RuleSet = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        for rule in &set.rules {
            rule.validate(model, margin)?;
        }
        Ok(set)
    }

    pub fn load(
        path: impl AsRef<Path>,
        model: &PerceptualModel,
        margin: &MarginLevels,
    ) -> Result<RuleSet> {
        RuleSet::from_str_checked(&std::fs::read_to_string(path)?, model, margin)
    }
}

/// Everything encode operations need besides the rules.
pub struct EncodeContext<'a> {
    pub model: &'a PerceptualModel,
    pub cfg: &'a PipelineConfig,
    pub colormap: &'a Colormap,
    pub margin: MarginLevels,
}

impl EncodeContext<'_> {
    fn units_per_mm(&self, icon: &DiffusionCurveImage) -> f64 {
        self.cfg.units_per_mm(icon)
    }
}

/// Map one record onto glyph parameters, starting from `base` (which carries
/// the wave shape and any fixed variables).
pub fn encode_record(
    record: &BTreeMap<String, f64>,
    rules: &RuleSet,
    base: &GlyphParams,
    icon: &DiffusionCurveImage,
    ctx: &EncodeContext,
) -> Result<GlyphParams> {
    let mut params = base.clone();
    for rule in &rules.rules {
        let value = *record.get(&rule.column).ok_or_else(|| {
            Error::validation(format!("record is missing column \"{}\"", rule.column))
        })?;
        let level = rule.level_of(value)?;
        apply_level(&mut params, rule, level, icon, ctx);
    }
    Ok(params)
}

fn apply_level(
    params: &mut GlyphParams,
    rule: &EncodingRule,
    level: u32,
    icon: &DiffusionCurveImage,
    ctx: &EncodeContext,
) {
    match rule.variable {
        EncVariable::GeomFreq => params.geom_freq = level,
        EncVariable::GeomAmpl => params.geom_ampl = level,
        EncVariable::ColorFreq => params.color_freq = level,
        EncVariable::ColorAmpl => params.color_ampl = level,
        EncVariable::CombinedFreq => {
            params.geom_freq = level;
            params.color_freq = level;
        }
        EncVariable::CombinedAmpl => {
            params.geom_ampl = level;
            params.color_ampl = level;
        }
        EncVariable::InnerColor => {
            let n = rule.level_count().max(1) as f64;
            let t = if n > 1.0 {
                (level as f64 - 1.0) / (n - 1.0)
            } else {
                0.5
            };
            params.inner_color = Some(ctx.colormap.eval(t));
        }
        EncVariable::MarginWidth => {
            let mm = ctx.margin.width_mm(level);
            params.margin_width = MarginWidth::Finite(mm * ctx.units_per_mm(icon));
        }
    }
}

/// One legend thumbnail.
#[derive(Debug, Clone)]
pub struct LegendEntry {
    pub column: String,
    pub variable: EncVariable,
    pub level: u32,
    pub label: String,
    pub file: String,
}

#[derive(Debug, Clone, Default)]
pub struct Legend {
    pub entries: Vec<LegendEntry>,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Render one miniature per (rule, level) into `out_dir` with deterministic
/// file names. Miniatures within a rule differ only in the swept variable.
pub fn emit_legend(
    rules: &RuleSet,
    icon: &DiffusionCurveImage,
    base: &GlyphParams,
    ctx: &EncodeContext,
    out_dir: impl AsRef<Path>,
) -> Result<Legend> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut legend = Legend::default();
    for rule in &rules.rules {
        for idx in 0..rule.level_count() {
            let level = match &rule.levels {
                Some(levels) => levels[idx],
                None => idx as u32 + 1,
            };
            let mut params = base.clone();
            apply_level(&mut params, rule, level, icon, ctx);
            let (img, _, _) = render_params(icon, &params, ctx.model, ctx.cfg)?;
            let file = format!(
                "legend_{}_{}_L{}.png",
                sanitize(&rule.column),
                rule.variable.name(),
                level
            );
            img.save_png(out_dir.join(&file))?;
            legend.entries.push(LegendEntry {
                column: rule.column.clone(),
                variable: rule.variable,
                level,
                label: rule.interval_label(idx),
                file,
            });
        }
    }
    Ok(legend)
}

/// Per-record result of a batch run.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub key: String,
    pub ok: bool,
    pub file: String,
    pub params: Option<GlyphParams>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| !e.ok).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "key,status,file,shape,geom_freq,geom_ampl,color_freq,color_ampl,margin_width,inner_color,message\n",
        );
        for e in &self.entries {
            let (shape, gf, ga, cf, ca, mw, ic) = match &e.params {
                Some(p) => (
                    p.shape.to_string(),
                    p.geom_freq.to_string(),
                    p.geom_ampl.to_string(),
                    p.color_freq.to_string(),
                    p.color_ampl.to_string(),
                    match p.margin_width {
                        MarginWidth::Infinite => "infinite".to_string(),
                        MarginWidth::Finite(w) => format!("{w:.3}"),
                    },
                    match p.inner_color {
                        Some(c) => format!("{:.3}|{:.3}|{:.3}", c[0], c[1], c[2]),
                        None => String::new(),
                    },
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.key,
                if e.ok { "ok" } else { "failed" },
                e.file,
                shape,
                gf,
                ga,
                cf,
                ca,
                mw,
                ic,
                e.message.replace(',', ";")
            );
        }
        s
    }
}

/// Parse a data CSV: first column is the record key, remaining columns are
/// numeric where referenced by rules.
pub fn parse_data_csv(text: &str) -> Result<Vec<(String, BTreeMap<String, f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::validation("data CSV has no header"));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let key = rec.get(0).unwrap_or("").to_string();
        let mut map = BTreeMap::new();
        for (i, h) in headers.iter().enumerate().skip(1) {
            if let Some(v) = rec.get(i) {
                if let Ok(num) = v.parse::<f64>() {
                    map.insert(h.to_string(), num);
                }
            }
        }
        out.push((key, map));
    }
    Ok(out)
}

/// Render one glyph per record; failures are collected in the manifest and
/// the batch continues. The manifest CSV is written next to the images.
pub fn batch_generate(
    data: &[(String, BTreeMap<String, f64>)],
    rules: &RuleSet,
    icon: &DiffusionCurveImage,
    base: &GlyphParams,
    ctx: &EncodeContext,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest::default();
    for (key, record) in data {
        let file = format!("{}.png", sanitize(key));
        let result = encode_record(record, rules, base, icon, ctx).and_then(|params| {
            let (img, _, outcome) = render_params(icon, &params, ctx.model, ctx.cfg)?;
            img.save_png(out_dir.join(&file))?;
            Ok((params, outcome.warnings.join("; ")))
        });
        match result {
            Ok((params, message)) => manifest.entries.push(ManifestEntry {
                key: key.clone(),
                ok: true,
                file: file.clone(),
                params: Some(params),
                message,
            }),
            Err(e) => manifest.entries.push(ManifestEntry {
                key: key.clone(),
                ok: false,
                file: String::new(),
                params: None,
                message: e.to_string(),
            }),
        }
    }
    std::fs::write(out_dir.join("manifest.csv"), manifest.to_csv())?;
    Ok(manifest)
}
