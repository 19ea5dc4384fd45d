//! Sectioned key/value run configuration.
//!
//! Four sections: `[model]`, `[train]`, `[augment]`, `[data]`. Every key
//! is optional except the data paths, which specific commands require.
//! Unknown sections or keys are rejected. Relative paths resolve against
//! the configuration file's directory at load time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut augment = AugmentConfig::identity(64, 64);
        let mut augment_enabled = false;
        let mut manifest: Option<PathBuf> = None;
        let mut out_dir: Option<PathBuf> = None;

        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "model" | "train" | "augment" | "data") {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got '{line}'",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            let ctx = |what: &str| {
                Error::Config(format!("line {}: bad {what} value '{value}'", lineno + 1))
            };
            match (section.as_str(), key) {
                ("model", "use_cbam") => model.use_cbam = value.parse().map_err(|_| ctx(key))?,
                ("model", "width") => model.width = value.parse().map_err(|_| ctx(key))?,
                ("model", "channel_scale") => {
                    model.channel_scale = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "num_classes") => {
                    model.num_classes = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "output_stride") => {
                    model.output_stride = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "aspp_rates") => {
                    let r = parse_triple(value).ok_or_else(|| ctx(key))?;
                    model.aspp_rates = r;
                }
                ("model", "aspp_channels") => {
                    model.aspp_channels = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "decoder_lowlevel_channels") => {
                    model.decoder_lowlevel_channels = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "cbam_reduction") => {
                    model.cbam_reduction = value.parse().map_err(|_| ctx(key))?
                }
                ("model", "cbam_spatial_kernel") => {
                    model.cbam_spatial_kernel = value.parse().map_err(|_| ctx(key))?
                }
                ("train", "lr0") => train.lr0 = value.parse().map_err(|_| ctx(key))?,
                ("train", "weight_decay") => {
                    train.weight_decay = value.parse().map_err(|_| ctx(key))?
                }
                ("train", "batch_size") => {
                    train.batch_size = value.parse().map_err(|_| ctx(key))?
                }
                ("train", "max_epochs") => {
                    train.max_epochs = value.parse().map_err(|_| ctx(key))?
                }
                ("train", "patience") => train.patience = value.parse().map_err(|_| ctx(key))?,
                ("train", "class_weights") => {
                    let (a, b) = parse_pair(value).ok_or_else(|| ctx(key))?;
                    train.class_weights = (a, b);
                }
                ("train", "lr_min") => train.lr_min = value.parse().map_err(|_| ctx(key))?,
                ("train", "val_fraction") => {
                    train.val_fraction = value.parse().map_err(|_| ctx(key))?
                }
                ("train", "seed") => train.seed = value.parse().map_err(|_| ctx(key))?,
                ("augment", "enabled") => augment_enabled = value.parse().map_err(|_| ctx(key))?,
                ("augment", "scale_range") => {
                    let (a, b) = parse_pair(value).ok_or_else(|| ctx(key))?;
                    augment.scale_range = (a, b);
                }
                ("augment", "hflip_p") => augment.hflip_p = value.parse().map_err(|_| ctx(key))?,
                ("augment", "vflip_p") => augment.vflip_p = value.parse().map_err(|_| ctx(key))?,
                ("augment", "rotation_deg") => {
                    augment.rotation_deg = value.parse().map_err(|_| ctx(key))?
                }
                ("augment", "blur_sigma_range") => {
                    let (a, b) = parse_pair(value).ok_or_else(|| ctx(key))?;
                    augment.blur_sigma_range = (a, b);
                }
                ("augment", "blur_p") => augment.blur_p = value.parse().map_err(|_| ctx(key))?,
                ("augment", "out_size") => {
                    let (a, b) = parse_pair::<usize>(value).ok_or_else(|| ctx(key))?;
                    augment.out_size = (a, b);
                }
                ("data", "manifest") => manifest = Some(base.join(value)),
                ("data", "out_dir") => out_dir = Some(base.join(value)),
                ("", k) => {
                    return Err(Error::Config(format!(
                        "line {}: key '{k}' appears before any section",
                        lineno + 1
                    )))
                }
                (s, k) => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{k}' in section [{s}]",
                        lineno + 1
                    )))
                }
            }
        }
        model.validate()?;
        train.augment = augment_enabled.then_some(augment);
        train.validate()?;
        Ok(RunConfig {
            model,
            train,
            manifest,
            out_dir,
        })
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("config is missing data.manifest".into()))
    }

    pub fn require_out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("config is missing data.out_dir".into()))
    }

    /// Canonical resolved text, written into every output directory.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        let m = &self.model;
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "use_cbam = {}", m.use_cbam);
        let _ = writeln!(out, "width = {}", m.width);
        let _ = writeln!(out, "channel_scale = {}", m.channel_scale);
        let _ = writeln!(out, "num_classes = {}", m.num_classes);
        let _ = writeln!(out, "output_stride = {}", m.output_stride);
        let _ = writeln!(
            out,
            "aspp_rates = {},{},{}",
            m.aspp_rates.0, m.aspp_rates.1, m.aspp_rates.2
        );
        let _ = writeln!(out, "aspp_channels = {}", m.aspp_channels);
        let _ = writeln!(
            out,
            "decoder_lowlevel_channels = {}",
            m.decoder_lowlevel_channels
        );
        let _ = writeln!(out, "cbam_reduction = {}", m.cbam_reduction);
        let _ = writeln!(out, "cbam_spatial_kernel = {}", m.cbam_spatial_kernel);
        let t = &self.train;
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "lr0 = {}", t.lr0);
        let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(out, "patience = {}", t.patience);
        let _ = writeln!(
            out,
            "class_weights = {},{}",
            t.class_weights.0, t.class_weights.1
        );
        let _ = writeln!(out, "lr_min = {}", t.lr_min);
        let _ = writeln!(out, "val_fraction = {}", t.val_fraction);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "\n[augment]");
        match &t.augment {
            Some(a) => {
                let _ = writeln!(out, "enabled = true");
                let _ = writeln!(out, "scale_range = {},{}", a.scale_range.0, a.scale_range.1);
                let _ = writeln!(out, "hflip_p = {}", a.hflip_p);
                let _ = writeln!(out, "vflip_p = {}", a.vflip_p);
                let _ = writeln!(out, "rotation_deg = {}", a.rotation_deg);
                let _ = writeln!(
                    out,
                    "blur_sigma_range = {},{}",
                    a.blur_sigma_range.0, a.blur_sigma_range.1
                );
                let _ = writeln!(out, "blur_p = {}", a.blur_p);
                let _ = writeln!(out, "out_size = {},{}", a.out_size.0, a.out_size.1);
            }
            None => {
                let _ = writeln!(out, "enabled = false");
            }
        }
        let _ = writeln!(out, "\n[data]");
        if let Some(m) = &self.manifest {
            let _ = writeln!(out, "manifest = {}", m.display());
        }
        if let Some(d) = &self.out_dir {
            let _ = writeln!(out, "out_dir = {}", d.display());
        }
        out
    }
}

fn parse_pair<T: std::str::FromStr>(value: &str) -> Option<(T, T)> {
    let (a, b) = value.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_triple(value: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return None;
    }
    Some((
        parts[0].parse().ok()?,
        parts[1].parse().ok()?,
        parts[2].parse().ok()?,
    ))
}
