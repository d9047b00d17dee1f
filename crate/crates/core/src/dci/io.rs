//! File format for diffusion-curve images and glyph parameter sets.
//!
//! Both formats are UTF-8 JSON. Numbers round-trip exactly: the writer emits
//! the shortest decimal that parses back to the same f64.
//!
//! DCI file shape:
//! ```json
//! {
//!   "width": 512.0, "height": 512.0,
//!   "curves": [{
//!     "closed": true, "barrier": false, "barrier_side": "both",
//!     "control_points": [[x, y], ...],
//!     "colors_left":  [{"r":0,"g":0,"b":0,"u":0.0}, ...],
//!     "colors_right": [...]
//!   }]
//! }
//! ```

use super::{BarrierSide, BezierCurve, ColorPoint, DiffusionCurveImage, GlyphParams, MarginWidth};
use crate::error::{Error, Result};
use crate::geom::pt;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct DciFile {
    width: f64,
    height: f64,
    curves: Vec<CurveFile>,
}

#[derive(Serialize, Deserialize)]
struct CurveFile {
    #[serde(default)]
    closed: bool,
    #[serde(default)]
    barrier: bool,
    #[serde(default = "default_side")]
    barrier_side: BarrierSide,
    control_points: Vec<[f64; 2]>,
    #[serde(default)]
    colors_left: Vec<ColorPoint>,
    #[serde(default)]
    colors_right: Vec<ColorPoint>,
}

fn default_side() -> BarrierSide {
    BarrierSide::Both
}

impl From<&BezierCurve> for CurveFile {
    fn from(c: &BezierCurve) -> Self {
        CurveFile {
            closed: c.closed,
            barrier: c.barrier,
            barrier_side: c.barrier_side,
            control_points: c.control_points.iter().map(|p| [p.x, p.y]).collect(),
            colors_left: c.colors_left.clone(),
            colors_right: c.colors_right.clone(),
        }
    }
}

impl From<CurveFile> for BezierCurve {
    fn from(f: CurveFile) -> Self {
        BezierCurve {
            control_points: f.control_points.iter().map(|&[x, y]| pt(x, y)).collect(),
            colors_left: f.colors_left,
            colors_right: f.colors_right,
            closed: f.closed,
            barrier: f.barrier,
            barrier_side: f.barrier_side,
        }
    }
}

fn parse_error(e: &serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    }
}

/// Parse a DCI from JSON text and validate every invariant.
pub fn dci_from_str(text: &str) -> Result<DiffusionCurveImage> {
    let file: DciFile = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    let dci = DiffusionCurveImage {
        width: file.width,
        height: file.height,
        curves: file.curves.into_iter().map(BezierCurve::from).collect(),
    };
    dci.validate()?;
    Ok(dci)
}

pub fn dci_to_string(dci: &DiffusionCurveImage) -> String {
    let file = DciFile {
        width: dci.width,
        height: dci.height,
        curves: dci.curves.iter().map(CurveFile::from).collect(),
    };
    serde_json::to_string_pretty(&file).expect("dci serialization cannot fail")
}

pub fn load_dci(path: impl AsRef<Path>) -> Result<DiffusionCurveImage> {
    let text = std::fs::read_to_string(path)?;
    dci_from_str(&text)
}

pub fn save_dci(dci: &DiffusionCurveImage, path: impl AsRef<Path>) -> Result<()> {
    dci.validate()?;
    std::fs::write(path, dci_to_string(dci))?;
    Ok(())
}

pub(super) mod margin_serde {
    use super::MarginWidth;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &MarginWidth, s: S) -> Result<S::Ok, S::Error> {
        match m {
            MarginWidth::Infinite => s.serialize_str("infinite"),
            MarginWidth::Finite(w) => s.serialize_f64(*w),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MarginWidth, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) if w > 0.0 && w.is_finite() => Ok(MarginWidth::Finite(w)),
            Raw::Num(w) => Err(D::Error::custom(format!(
                "margin_width {w} must be positive and finite"
            ))),
            Raw::Text(t) if t == "infinite" || t == "inf" => Ok(MarginWidth::Infinite),
            Raw::Text(t) => Err(D::Error::custom(format!(
                "margin_width must be a number or \"infinite\", got \"{t}\""
            ))),
        }
    }
}

pub fn load_glyph_params(path: impl AsRef<Path>) -> Result<GlyphParams> {
    let text = std::fs::read_to_string(path)?;
    glyph_params_from_str(&text)
}

pub fn glyph_params_from_str(text: &str) -> Result<GlyphParams> {
    let params: GlyphParams = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    if let Some(c) = params.inner_color {
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("inner_color channels must be in [0,1]"));
        }
    }
    Ok(params)
}

pub fn save_glyph_params(params: &GlyphParams, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(params).expect("params serialization cannot fail");
    std::fs::write(path, text)?;
    Ok(())
}

/// Field names used by `GlyphParams` files, matching the struct directly:
/// `{shape, geom_freq, geom_ampl, color_freq, color_ampl, margin_width,
/// inner_color}` where `margin_width` is a number or `"infinite"` and
/// `inner_color` is `[r, g, b]` or `null`.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::WaveShape;

    const MINIMAL: &str = r#"{
        "width": 32, "height": 32,
        "curves": [{
            "closed": false, "barrier": false, "barrier_side": "both",
            "control_points": [[0,0],[1,0],[2,0],[3,0]],
            "colors_left": [{"r":0,"g":0,"b":0,"u":0},{"r":0,"g":0,"b":0,"u":1}],
            "colors_right": [{"r":1,"g":1,"b":1,"u":0},{"r":1,"g":1,"b":1,"u":1}]
        }]
    }"#;

    #[test]
    fn minimal_file_parses() {
        let dci = dci_from_str(MINIMAL).unwrap();
        assert_eq!(dci.curves.len(), 1);
        assert_eq!(dci.curves[0].segments(), 1);
    }

    #[test]
    fn bad_control_point_count_rejected() {
        let text = MINIMAL.replace("[[0,0],[1,0],[2,0],[3,0]]", "[[0,0],[1,0],[2,0],[3,0],[4,0],[5,0]]");
        let err = dci_from_str(&text).unwrap_err();
        assert!(err.to_string().contains("3k+1"), "{err}");
    }

    #[test]
    fn malformed_json_names_position() {
        let err = dci_from_str("{\"width\": 32,\n \"height\": }").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn round_trip_identity() {
        let dci = dci_from_str(MINIMAL).unwrap();
        let again = dci_from_str(&dci_to_string(&dci)).unwrap();
        assert_eq!(dci, again);
    }

    #[test]
    fn params_margin_forms() {
        let p = glyph_params_from_str(
            r#"{"shape":"sin","geom_freq":3,"geom_ampl":2,"color_freq":0,
                "color_ampl":0,"margin_width":"infinite","inner_color":null}"#,
        )
        .unwrap();
        assert_eq!(p.shape, WaveShape::Sinusoidal);
        assert_eq!(p.margin_width, MarginWidth::Infinite);

        let p = glyph_params_from_str(
            r#"{"shape":"rectangular","geom_freq":1,"geom_ampl":1,"color_freq":0,
                "color_ampl":0,"margin_width":12.5,"inner_color":[0.1,0.2,0.3]}"#,
        )
        .unwrap();
        assert_eq!(p.margin_width, MarginWidth::Finite(12.5));
    }
}
