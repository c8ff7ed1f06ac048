//! Shared settings: defaults, an optional versioned config file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use eigenlane::io::load_json;
use eigenlane::pipeline::{DEFAULT_KAPPA, DEFAULT_NMS_IOU, DEFAULT_STRIPE_WIDTH, DEFAULT_T};
use eigenlane::{Error, Result};
use serde::Deserialize;

/// Environment variable that redirects relative output paths.
pub const OUTPUT_DIR_ENV: &str = "EIGENLANE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tusimple,
    Csv,
    Culane,
}

impl Format {
    pub fn default_image_size(self) -> (u32, u32) {
        match self {
            Format::Tusimple | Format::Csv => (1280, 720),
            Format::Culane => (1640, 590),
        }
    }
}

pub fn parse_image_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

/// Flags accepted by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Versioned JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of sampled heights per lane.
    #[arg(long, global = true, value_name = "N")]
    pub samples: Option<usize>,
    /// Eigenlane basis rank.
    #[arg(long, global = true, value_name = "M")]
    pub rank: Option<usize>,
    /// Number of candidates (clusters or straight anchors).
    #[arg(long, global = true, value_name = "K")]
    pub k: Option<usize>,
    /// Lanes kept by NMS before clique selection.
    #[arg(long, global = true, value_name = "T")]
    pub t: Option<usize>,
    /// Stripe IoU threshold: NMS suppression in `detect`, matching in `eval`.
    #[arg(long, global = true, value_name = "IOU")]
    pub iou_thresh: Option<f64>,
    /// Minimum pairwise relation inside a clique.
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Stripe width in pixels.
    #[arg(long, global = true, value_name = "PX")]
    pub stripe_width: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Annotation format of dataset inputs.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Image size for formats that do not record it, e.g. 1640x590.
    #[arg(long, global = true, value_name = "WxH", value_parser = parse_image_size)]
    pub image_size: Option<(u32, u32)>,
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    samples: Option<usize>,
    rank: Option<usize>,
    k: Option<usize>,
    t: Option<usize>,
    iou_thresh: Option<f64>,
    kappa: Option<f64>,
    stripe_width: Option<u32>,
    seed: Option<u64>,
    format: Option<Format>,
    image_size: Option<String>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub samples: usize,
    pub rank: usize,
    pub k: usize,
    pub t: usize,
    pub iou_thresh: f64,
    pub kappa: f64,
    pub stripe_width: u32,
    pub seed: u64,
    pub format: Format,
    pub image_size: (u32, u32),
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file: ConfigFile = match &args.config {
            Some(path) => load_json(path)?,
            None => ConfigFile::default(),
        };
        let file_size = file
            .image_size
            .as_deref()
            .map(parse_image_size)
            .transpose()
            .map_err(|e| Error::InvalidConfig(format!("image_size: {e}")))?;
        let format = args.format.or(file.format).unwrap_or(Format::Tusimple);
        let threads = args
            .threads
            .or(file.threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or(file.output_dir);
        let settings = Self {
            samples: args.samples.or(file.samples).unwrap_or(50),
            rank: args.rank.or(file.rank).unwrap_or(6),
            k: args.k.or(file.k).unwrap_or(1000),
            t: args.t.or(file.t).unwrap_or(DEFAULT_T),
            iou_thresh: args
                .iou_thresh
                .or(file.iou_thresh)
                .unwrap_or(DEFAULT_NMS_IOU),
            kappa: args.kappa.or(file.kappa).unwrap_or(DEFAULT_KAPPA),
            stripe_width: args
                .stripe_width
                .or(file.stripe_width)
                .unwrap_or(DEFAULT_STRIPE_WIDTH),
            seed: args.seed.or(file.seed).unwrap_or(0),
            format,
            image_size: args
                .image_size
                .or(file_size)
                .unwrap_or(format.default_image_size()),
            threads,
            output_dir,
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.samples < 2 {
            return bad("samples must be at least 2");
        }
        if self.rank == 0 || self.k == 0 || self.t == 0 {
            return bad("rank, k and t must be at least 1");
        }
        if !(self.iou_thresh > 0.0 && self.iou_thresh <= 1.0) {
            return bad("iou_thresh must lie in (0, 1]");
        }
        if !(-1.0..=1.0).contains(&self.kappa) {
            return bad("kappa must lie in [-1, 1]");
        }
        if self.stripe_width == 0 {
            return bad("stripe_width must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    /// Where an output file goes: relative paths land in the output directory
    /// when one is configured. Parent directories are created.
    pub fn output_path(&self, path: &Path) -> Result<PathBuf> {
        let out = match &self.output_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        };
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(out)
    }
}
