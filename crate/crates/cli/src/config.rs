use std::path::{Path, PathBuf};

use clap::Args;
use cobbkit::io::{AngleOrder, CornerOrder, LandmarkLayout};
use cobbkit::pipeline::{CropParams, PipelineOptions, SmoothingParams};
use cobbkit::postprocess::{OutlierWidthRule, DEFAULT_CB0, DEFAULT_CT0, DEFAULT_POLY_DEGREE};
use cobbkit::geometry::{DEFAULT_PAD_H, DEFAULT_PAD_W};
use cobbkit::{Error, SmoothMode};
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "COBBKIT_OUT_DIR";

/// Settings shared by every subcommand. Each one can also come from the
/// TOML file given with `--config`; flags take precedence.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any of the settings below
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (also COBBKIT_OUT_DIR)
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub ct0: Option<f64>,
    #[arg(long, global = true)]
    pub cb0: Option<f64>,
    /// Width/height of the image the crop fractions were tuned on; enables cropping
    #[arg(long, global = true)]
    pub ref_aspect: Option<f64>,
    #[arg(long, global = true)]
    pub pad_w: Option<f64>,
    #[arg(long, global = true)]
    pub pad_h: Option<f64>,
    #[arg(long, global = true)]
    pub poly_degree: Option<usize>,
    /// Smooth landmarks before computing angles
    #[arg(long, global = true, overrides_with = "no_smooth")]
    pub smooth: bool,
    #[arg(long, global = true)]
    pub no_smooth: bool,
    /// all-points | left-right-split
    #[arg(long, global = true)]
    pub smooth_mode: Option<SmoothMode>,
    /// own | neighbor-mean
    #[arg(long, global = true)]
    pub outlier_width_rule: Option<OutlierWidthRule>,
    /// Keep every detection
    #[arg(long, global = true)]
    pub no_outlier_rejection: bool,
    /// xy-interleaved | x-block-y-block
    #[arg(long, global = true)]
    pub layout: Option<LandmarkLayout>,
    /// Corner stored in each slot of a landmark row, e.g. tl,tr,bl,br
    #[arg(long, global = true)]
    pub corner_order: Option<CornerOrder>,
    /// mt-pt-tl | pt-mt-tl
    #[arg(long, global = true)]
    pub angle_order: Option<AngleOrder>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
    ct0: Option<f64>,
    cb0: Option<f64>,
    ref_aspect: Option<f64>,
    pad_w: Option<f64>,
    pad_h: Option<f64>,
    poly_degree: Option<usize>,
    smooth: Option<bool>,
    smooth_mode: Option<SmoothMode>,
    outlier_width_rule: Option<OutlierWidthRule>,
    reject_outliers: Option<bool>,
    layout: Option<LandmarkLayout>,
    corner_order: Option<String>,
    angle_order: Option<AngleOrder>,
}

/// Fully resolved settings, written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PipelineConfig {
    pub ct0: f64,
    pub cb0: f64,
    pub ref_aspect: Option<f64>,
    pub pad_w: f64,
    pub pad_h: f64,
    pub poly_degree: usize,
    pub smooth: bool,
    pub smooth_mode: SmoothMode,
    pub outlier_width_rule: OutlierWidthRule,
    pub reject_outliers: bool,
    pub layout: LandmarkLayout,
    pub corner_order: String,
    pub angle_order: AngleOrder,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub jobs: usize,
}

impl PipelineConfig {
    pub fn resolve(args: &ConfigArgs, env_out_dir: Option<PathBuf>) -> Result<Self, Error> {
        let file = match &args.config {
            Some(p) => load(p)?,
            None => ConfigFile::default(),
        };
        let corner_order = match (&args.corner_order, &file.corner_order) {
            (Some(o), _) => *o,
            (None, Some(s)) => s.parse()?,
            (None, None) => CornerOrder::CANONICAL,
        };
        let smooth = if args.smooth {
            true
        } else if args.no_smooth {
            false
        } else {
            file.smooth.unwrap_or(false)
        };
        let cfg = Self {
            ct0: args.ct0.or(file.ct0).unwrap_or(DEFAULT_CT0),
            cb0: args.cb0.or(file.cb0).unwrap_or(DEFAULT_CB0),
            ref_aspect: args.ref_aspect.or(file.ref_aspect),
            pad_w: args.pad_w.or(file.pad_w).unwrap_or(DEFAULT_PAD_W),
            pad_h: args.pad_h.or(file.pad_h).unwrap_or(DEFAULT_PAD_H),
            poly_degree: args.poly_degree.or(file.poly_degree).unwrap_or(DEFAULT_POLY_DEGREE),
            smooth,
            smooth_mode: args.smooth_mode.or(file.smooth_mode).unwrap_or_default(),
            outlier_width_rule: args.outlier_width_rule.or(file.outlier_width_rule).unwrap_or_default(),
            reject_outliers: !args.no_outlier_rejection && file.reject_outliers.unwrap_or(true),
            layout: args.layout.or(file.layout).unwrap_or_default(),
            corner_order: corner_order.to_string(),
            angle_order: args.angle_order.or(file.angle_order).unwrap_or_default(),
            out_dir: args
                .out_dir
                .clone()
                .or(env_out_dir)
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from(".")),
            jobs: args.jobs.or(file.jobs).unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.ct0) || !(0.0..1.0).contains(&self.cb0) {
            return bad(format!("ct0 and cb0 must lie in [0, 1), got {} and {}", self.ct0, self.cb0));
        }
        if let Some(a) = self.ref_aspect {
            if !(a.is_finite() && a > 0.0) {
                return bad(format!("ref-aspect must be positive, got {a}"));
            }
        }
        if !(self.pad_w >= 0.0 && self.pad_h >= 0.0 && self.pad_w.is_finite() && self.pad_h.is_finite()) {
            return bad(format!("padding must be non-negative, got {} x {}", self.pad_w, self.pad_h));
        }
        if self.poly_degree == 0 {
            return bad("poly-degree must be at least 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn corner_order(&self) -> CornerOrder {
        self.corner_order.parse().expect("validated on resolve")
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            crop: self.ref_aspect.map(|ref_aspect| CropParams {
                ct0: self.ct0,
                cb0: self.cb0,
                ref_aspect,
            }),
            reject_outliers: self.reject_outliers,
            outlier_rule: self.outlier_width_rule,
            smoothing: self.smooth.then(|| self.smoothing()),
            ..Default::default()
        }
    }

    pub fn smoothing(&self) -> SmoothingParams {
        SmoothingParams {
            degree: self.poly_degree,
            mode: self.smooth_mode,
        }
    }
}

fn load(path: &Path) -> Result<ConfigFile, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
