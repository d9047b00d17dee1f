//! Command-line interface for turning diffusion-curve icons into
//! quantitative glyphs.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use iconglyph::coloring::Colormap;
use iconglyph::dci::{
    load_dci, load_glyph_params, save_dci, DiffusionCurveImage, GlyphParams, MarginWidth,
    WaveShape,
};
use iconglyph::encode::{
    batch_generate, emit_legend, parse_data_csv, EncodeContext, MarginLevels, RuleSet,
};
use iconglyph::percept::{build_model, load_survey_csv, PerceptualModel, SizeTransferSpec};
use iconglyph::pipeline::{render_params, PipelineConfig};
use iconglyph::render::render_glyph;
use iconglyph::Error;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Generate quantitative glyphs from diffusion-curve icons.
#[derive(Parser)]
#[command(name = "iconglyph", version, about)]
struct Cli {
    /// Configuration file (JSON); also read from $ICONGLYPH_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a DCI file and optionally write it back normalized.
    Convert {
        input: PathBuf,
        /// Write the normalized file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a DCI file as-is.
    Render {
        input: PathBuf,
        /// Output image (.png or .ppm).
        #[arg(long, default_value = "out.png")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Construct a glyph from an icon and quantized variable levels.
    Glyph {
        icon: PathBuf,
        #[command(flatten)]
        vars: GlyphVars,
        /// Read all variable levels from a glyph-parameters JSON file.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output image (.png or .ppm).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the modulated DCI here.
        #[arg(long)]
        out_dci: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build a perceptual model from survey data.
    Calibrate {
        /// Survey CSV (may be omitted with --use-default).
        survey: Option<PathBuf>,
        /// Output model file.
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Write the calibration report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Skip the survey and write the shipped default model.
        #[arg(long)]
        use_default: bool,
    },
    /// Encode a data CSV into one glyph per record.
    Encode {
        data: PathBuf,
        /// Encoding rules file (JSON).
        #[arg(long)]
        rules: PathBuf,
        /// Base icon.
        #[arg(long)]
        icon: PathBuf,
        /// Output directory for glyphs and the manifest.
        #[arg(long, default_value = "glyphs")]
        out_dir: PathBuf,
        /// Also render per-rule legend miniatures.
        #[arg(long)]
        legend: bool,
        #[command(flatten)]
        vars: GlyphVars,
        #[command(flatten)]
        common: CommonOpts,
    },
}

/// Quantized variable levels (0 leaves a variable unused).
#[derive(Args, Clone)]
struct GlyphVars {
    /// Wave shape: sinusoidal, rectangular or sawtooth.
    #[arg(long, default_value = "sinusoidal")]
    shape: String,
    /// Geometric frequency level.
    #[arg(long, default_value_t = 0)]
    freq: u32,
    /// Geometric amplitude level.
    #[arg(long, default_value_t = 0)]
    ampl: u32,
    /// Color frequency level.
    #[arg(long, default_value_t = 0)]
    col_freq: u32,
    /// Color amplitude level.
    #[arg(long, default_value_t = 0)]
    col_ampl: u32,
    /// Margin width in millimeters, or "inf" for no margin.
    #[arg(long, default_value = "inf")]
    margin: String,
    /// Inner-region data value in [0, 1], mapped through the colormap.
    #[arg(long)]
    inner_value: Option<f64>,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Physical glyph size the stimuli map to.
    #[arg(long)]
    size_mm: Option<f64>,
    /// Output raster size in pixels (defaults to size-mm times dpi).
    #[arg(long)]
    canvas_px: Option<usize>,
    /// Pixels per millimeter when canvas-px is not given.
    #[arg(long)]
    dpi_px_per_mm: Option<f64>,
    /// Skeleton clearance for intersection prevention, canvas units.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Joint merge threshold in degrees.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sequential colormap for the inner region.
    #[arg(long)]
    colormap: Option<String>,
    /// Extra colormap registry file.
    #[arg(long)]
    colormaps_file: Option<PathBuf>,
    /// Perceptual model file (defaults to the shipped model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Lower scaling bound for stimulus minima in size transfer.
    #[arg(long)]
    omega_min: Option<f64>,
    /// Scaling slack for the amplitude maximum in size transfer.
    #[arg(long)]
    slack_ampl: Option<f64>,
    /// Scaling slack for the frequency maxima in size transfer.
    #[arg(long)]
    slack_freq: Option<f64>,
}

/// Optional configuration file; flags override its values.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    size_mm: Option<f64>,
    canvas_px: Option<usize>,
    dpi_px_per_mm: Option<f64>,
    epsilon_px: Option<f64>,
    alpha_deg: Option<f64>,
    colormap: Option<String>,
    colormaps_file: Option<PathBuf>,
    model: Option<PathBuf>,
    margin_levels: Option<MarginLevelsFile>,
}

#[derive(Deserialize)]
struct MarginLevelsFile {
    min_mm: f64,
    max_mm: f64,
    levels: u32,
}

struct Session {
    cfg: PipelineConfig,
    model: PerceptualModel,
    colormap: Colormap,
    margin_levels: MarginLevels,
    size_notes: Vec<String>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let path = match path {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("ICONGLYPH_CONFIG").map(PathBuf::from),
    };
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("bad config {}", path.display()))
}

fn build_session(config: Option<&Path>, common: &CommonOpts) -> anyhow::Result<Session> {
    let file = load_config(config)?;
    let mut cfg = PipelineConfig::default();
    cfg.glyph_size_mm = common.size_mm.or(file.size_mm).unwrap_or(cfg.glyph_size_mm);
    cfg.canvas_px = common.canvas_px.or(file.canvas_px);
    cfg.dpi_px_per_mm = common
        .dpi_px_per_mm
        .or(file.dpi_px_per_mm)
        .unwrap_or(cfg.dpi_px_per_mm);
    cfg.epsilon_px = common.epsilon.or(file.epsilon_px).unwrap_or(cfg.epsilon_px);
    cfg.alpha_deg = common.alpha.or(file.alpha_deg).unwrap_or(cfg.alpha_deg);
    cfg.colormap = common
        .colormap
        .clone()
        .or(file.colormap)
        .unwrap_or(cfg.colormap);
    cfg.colormap_registry = common.colormaps_file.clone().or(file.colormaps_file);
    if cfg.glyph_size_mm <= 0.0 || cfg.dpi_px_per_mm <= 0.0 {
        bail!("size-mm and dpi must be positive");
    }

    let model_path = common.model.clone().or(file.model);
    let base_model = match &model_path {
        Some(p) => PerceptualModel::load(p)
            .with_context(|| format!("cannot load model {}", p.display()))?,
        None => PerceptualModel::default_model(),
    };

    // transfer the quantization when rendering at a different physical size
    const CALIBRATED_MM: f64 = 50.0;
    let (model, size_notes) = if (cfg.glyph_size_mm - CALIBRATED_MM).abs() > 1e-9 {
        let omega = cfg.glyph_size_mm / CALIBRATED_MM;
        if omega > 1.0 {
            bail!("glyph sizes above the calibrated 50 mm are not supported");
        }
        let mut spec = SizeTransferSpec::defaults_for(omega);
        if let Some(om) = common.omega_min {
            let om = om.max(omega);
            for p in [
                &mut spec.geom_ampl,
                &mut spec.geom_freq,
                &mut spec.color_freq,
            ] {
                p.omega_min = om;
            }
        }
        if let Some(s) = common.slack_ampl {
            spec.geom_ampl.omega_max = (omega + s).min(1.0);
        }
        if let Some(s) = common.slack_freq {
            spec.geom_freq.omega_max = (omega + s).min(1.0);
            spec.color_freq.omega_max = (omega + s).min(1.0);
        }
        base_model.size_transferred(&spec)?
    } else {
        (base_model, Vec::new())
    };

    let colormap = Colormap::resolve(&cfg.colormap, cfg.colormap_registry.as_deref())?;
    let margin_levels = file
        .margin_levels
        .map(|m| MarginLevels {
            min_mm: m.min_mm,
            max_mm: m.max_mm,
            levels: m.levels,
        })
        .unwrap_or_default();

    Ok(Session {
        cfg,
        model,
        colormap,
        margin_levels,
        size_notes,
    })
}

fn parse_shape(s: &str) -> anyhow::Result<WaveShape> {
    Ok(match s {
        "sin" | "sinusoidal" => WaveShape::Sinusoidal,
        "rect" | "rectangular" => WaveShape::Rectangular,
        "saw" | "sawtooth" => WaveShape::Sawtooth,
        other => bail!("unknown shape \"{other}\" (sin, rect or saw)"),
    })
}

fn build_params(
    vars: &GlyphVars,
    session: &Session,
    icon: &DiffusionCurveImage,
) -> anyhow::Result<GlyphParams> {
    let margin_width = match vars.margin.as_str() {
        "inf" | "infinite" => MarginWidth::Infinite,
        s => {
            let mm: f64 = s.parse().with_context(|| format!("bad margin \"{s}\""))?;
            if mm <= 0.0 {
                bail!("margin must be positive");
            }
            MarginWidth::Finite(mm * session.cfg.units_per_mm(icon))
        }
    };
    let inner_color = vars
        .inner_value
        .map(|v| session.colormap.eval(v.clamp(0.0, 1.0)));
    Ok(GlyphParams {
        shape: parse_shape(&vars.shape)?,
        geom_freq: vars.freq,
        geom_ampl: vars.ampl,
        color_freq: vars.col_freq,
        color_ampl: vars.col_ampl,
        margin_width,
        inner_color,
    })
}

fn save_image(img: &iconglyph::render::RasterImage, path: &Path) -> anyhow::Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => img.save_ppm(path)?,
        _ => img.save_png(path)?,
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Convert { input, out } => {
            let dci = load_dci(&input)?;
            let closed = dci.curves.iter().filter(|c| c.closed).count();
            println!(
                "{}: {}x{} canvas, {} curves ({} closed, {} open, {} barriers)",
                input.display(),
                dci.width,
                dci.height,
                dci.curves.len(),
                closed,
                dci.curves.len() - closed,
                dci.curves.iter().filter(|c| c.barrier).count()
            );
            if let Some(out) = out {
                save_dci(&dci, &out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Render { input, out, common } => {
            let session = build_session(cli.config.as_deref(), &common)?;
            let dci = load_dci(&input)?;
            let (img, report) = render_glyph(&dci, session.cfg.render_px())?;
            save_image(&img, &out)?;
            println!(
                "wrote {} ({}x{}, residual {:.2e} in {} cycles)",
                out.display(),
                img.width,
                img.height,
                report.residual,
                report.cycles
            );
        }
        Command::Glyph {
            icon,
            vars,
            params,
            out,
            out_dci,
            common,
        } => {
            let session = build_session(cli.config.as_deref(), &common)?;
            for note in &session.size_notes {
                log::info!("{note}");
            }
            let dci = load_dci(&icon)?;
            let params = match params {
                Some(path) => load_glyph_params(&path)?,
                None => build_params(&vars, &session, &dci)?,
            };
            let (img, report, outcome) =
                render_params(&dci, &params, &session.model, &session.cfg)?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            let out = out.unwrap_or_else(|| {
                let stem = icon.file_stem().and_then(|s| s.to_str()).unwrap_or("glyph");
                PathBuf::from(format!("{stem}_glyph.png"))
            });
            save_image(&img, &out)?;
            if let Some(path) = out_dci {
                save_dci(&outcome.dci, &path)?;
            }
            println!(
                "wrote {} ({}x{}, residual {:.2e})",
                out.display(),
                img.width,
                img.height,
                report.residual
            );
        }
        Command::Calibrate {
            survey,
            out,
            report,
            use_default,
        } => {
            let (model, report_text) = if use_default {
                let model = PerceptualModel::default_model();
                let mut text = String::from("shipped default model\n");
                for var in iconglyph::percept::Variable::ALL {
                    let q = &model.variable(var).quantization;
                    text.push_str(&format!(
                        "  {}: dv = {:.2}, levels = {}\n",
                        var.name(),
                        q.delta_v,
                        q.levels
                    ));
                }
                (model, text)
            } else {
                let survey = survey.context("survey CSV required unless --use-default")?;
                let records = load_survey_csv(&survey)?;
                let (model, rep) = build_model(&records)?;
                (model, rep.to_text())
            };
            model.save(&out)?;
            match report {
                Some(path) => std::fs::write(&path, &report_text)?,
                None => print!("{report_text}"),
            }
            println!("wrote {}", out.display());
        }
        Command::Encode {
            data,
            rules,
            icon,
            out_dir,
            legend,
            vars,
            common,
        } => {
            let session = build_session(cli.config.as_deref(), &common)?;
            let dci = load_dci(&icon)?;
            let rules = RuleSet::load(&rules, &session.model, &session.margin_levels)?;
            let base = build_params(&vars, &session, &dci)?;
            let records = parse_data_csv(&std::fs::read_to_string(&data)?)?;
            let ctx = EncodeContext {
                model: &session.model,
                cfg: &session.cfg,
                colormap: &session.colormap,
                margin: session.margin_levels,
            };
            let manifest = batch_generate(&records, &rules, &dci, &base, &ctx, &out_dir)?;
            if legend {
                let legend = emit_legend(&rules, &dci, &base, &ctx, &out_dir)?;
                println!("wrote {} legend miniatures", legend.entries.len());
            }
            let failed = manifest.failed();
            println!(
                "{} of {} glyphs rendered into {}",
                manifest.entries.len() - failed,
                manifest.entries.len(),
                out_dir.display()
            );
            if failed > 0 {
                bail!("__partial__ {failed} records failed; see manifest.csv");
            }
        }
    }
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.to_string().starts_with("__partial__") {
        return 4;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) | Some(Error::MultiplicityOverflow { .. }) => 3,
        Some(_) => 2,
        None => 2,
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            let msg = err.to_string();
            let msg = msg.strip_prefix("__partial__ ").unwrap_or(&msg);
            eprintln!("error: {msg}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(code)
        }
    }
}
