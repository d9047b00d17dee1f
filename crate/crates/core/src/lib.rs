//! Diffusion-curve icons to quantitative glyphs.
//!
//! The library takes an icon stored as a diffusion-curve image (cubic Bezier
//! contours carrying left/right color ramps), converts its contours into cubic
//! B-splines, and modulates geometry and color under seven visual variables:
//! wave shape, geometric frequency and amplitude, color frequency and
//! amplitude, margin width, and inner color. A perceptual model calibrated
//! from survey data quantizes each variable into readable levels, so tabular
//! data values map to discrete, perceptually spaced glyph settings.
//!
//! Main entry points:
//! - [`dci`]: the diffusion-curve image data model and file format
//! - [`pipeline`]: apply a [`dci::GlyphParams`] to an icon and render it
//! - [`percept`]: build or load the perceptual model, quantization, scaling
//! - [`encode`]: map data records onto glyph parameters and emit legends

pub mod coloring;
pub mod dci;
pub mod dist;
pub mod encode;
pub mod error;
pub mod geom;
pub mod percept;
pub mod pipeline;
pub mod render;
pub mod spline;
pub mod wave;

pub use error::{Error, Result};
