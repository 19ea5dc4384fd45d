//! Dataset ingestion, synthesis, augmentation, splitting and statistics.
//!
//! Samples are 8-bit RGB tiles normalized to [0,1] (channel-first) with
//! binary masks, optionally georeferenced by a degree bounding box. A CSV
//! manifest (`id,image,mask,lon_min,lon_max,lat_min,lat_max`, geo columns
//! optional-empty, paths relative to the manifest) ties a dataset together.

mod augment;
mod split;
mod stats;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use split::{sichuan_regions, random_split, region_split, split_indices, RegionSplit};
pub use stats::{compute_stats, DatasetStats};
pub use synth::{generate_synthetic, generate_synthetic_to, SynthConfig};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::png_io;
use crate::tensor::Tensor;

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl GeoBox {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<GeoBox> {
        if lon_min >= lon_max || lat_min >= lat_max {
            return Err(Error::Data(format!(
                "degenerate geo box [{lon_min},{lon_max}]x[{lat_min},{lat_max}]"
            )));
        }
        Ok(GeoBox {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.lon_min + self.lon_max) / 2.0,
            (self.lat_min + self.lat_max) / 2.0,
        )
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn intersects(&self, other: &GeoBox) -> bool {
        self.lon_min < other.lon_max
            && other.lon_min < self.lon_max
            && self.lat_min < other.lat_max
            && other.lat_min < self.lat_max
    }
}

/// A named rectangular evaluation region.
#[derive(Debug, Clone)]
pub struct RegionBox {
    pub name: String,
    pub bounds: GeoBox,
}

/// One image/mask pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` values in [0,1].
    pub image: Tensor<f32>,
    /// Row-major `H·W` values in {0,1}.
    pub mask: Vec<u8>,
    pub geo: Option<GeoBox>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Enforce the type invariants: channel-first RGB in [0,1], binary
    /// mask of matching spatial extent.
    pub fn validate(&self) -> Result<()> {
        let shape = self.image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Data(format!(
                "sample {}: image shape {shape:?} is not [3,H,W]",
                self.id
            )));
        }
        if self.mask.len() != shape[1] * shape[2] {
            return Err(Error::Data(format!(
                "sample {}: mask has {} pixels for a {}x{} image",
                self.id,
                self.mask.len(),
                shape[1],
                shape[2]
            )));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "sample {}: image values leave [0,1]",
                self.id
            )));
        }
        if self.mask.iter().any(|v| *v > 1) {
            return Err(Error::Data(format!(
                "sample {}: mask values leave {{0,1}}",
                self.id
            )));
        }
        Ok(())
    }

    /// Fraction of moraine (class 1) pixels.
    pub fn moraine_fraction(&self) -> f64 {
        let ones = self.mask.iter().filter(|v| **v == 1).count();
        ones as f64 / self.mask.len() as f64
    }
}

/// Load a dataset from a CSV manifest. Images must be 8-bit RGB PNGs
/// (scaled by 1/255), masks 8-bit grayscale PNGs (any nonzero byte is
/// class 1).
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty manifest", manifest.display())))?
        .1;
    if header.trim() != MANIFEST_HEADER {
        return Err(Error::Data(format!(
            "{}: manifest header must be '{MANIFEST_HEADER}'",
            manifest.display()
        )));
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::Data(format!(
                "{}:{}: expected 7 fields, found {}",
                manifest.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let geo_fields = &fields[3..7];
        let geo = if geo_fields.iter().all(|f| f.is_empty()) {
            None
        } else {
            let mut vals = [0f64; 4];
            for (i, f) in geo_fields.iter().enumerate() {
                vals[i] = f.parse().map_err(|_| {
                    Error::Data(format!(
                        "{}:{}: bad geo value '{f}'",
                        manifest.display(),
                        lineno + 1
                    ))
                })?;
            }
            Some(GeoBox::new(vals[0], vals[1], vals[2], vals[3])?)
        };
        samples.push(load_sample(
            fields[0],
            &base.join(fields[1]),
            &base.join(fields[2]),
            geo,
        )?);
    }
    Ok(samples)
}

fn load_sample(
    id: &str,
    image_path: &Path,
    mask_path: &Path,
    geo: Option<GeoBox>,
) -> Result<Sample> {
    let (iw, ih, rgb) = png_io::read_rgb(image_path)?;
    let (mw, mh, gray) = png_io::read_gray(mask_path)?;
    if (iw, ih) != (mw, mh) {
        return Err(Error::Data(format!(
            "sample {id}: image {iw}x{ih} vs mask {mw}x{mh}"
        )));
    }
    // Interleaved RGB rows to channel-first planes, scaled to [0,1].
    let mut data = vec![0f32; 3 * ih * iw];
    for p in 0..ih * iw {
        for ch in 0..3 {
            data[ch * ih * iw + p] = rgb[p * 3 + ch] as f32 / 255.0;
        }
    }
    let mask: Vec<u8> = gray.iter().map(|b| u8::from(*b != 0)).collect();
    let sample = Sample {
        id: id.to_string(),
        image: Tensor::new(&[3, ih, iw], data)?,
        mask,
        geo,
    };
    sample.validate()?;
    Ok(sample)
}

pub const MANIFEST_HEADER: &str = "id,image,mask,lon_min,lon_max,lat_min,lat_max";

/// Write samples as PNG pairs plus a manifest under `dir`; returns the
/// manifest path. Images are quantized to the 8-bit grid (the loader then
/// reproduces them bitwise).
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in samples {
        s.validate()?;
        let (h, w) = (s.height(), s.width());
        let mut rgb = vec![0u8; h * w * 3];
        let data = s.image.data();
        for p in 0..h * w {
            for ch in 0..3 {
                rgb[p * 3 + ch] = (data[ch * h * w + p] * 255.0).round() as u8;
            }
        }
        png_io::write_rgb(&images.join(format!("{}.png", s.id)), w, h, &rgb)?;
        let gray: Vec<u8> = s.mask.iter().map(|v| v * 255).collect();
        png_io::write_gray(&masks.join(format!("{}.png", s.id)), w, h, &gray)?;
        let geo = match &s.geo {
            Some(g) => format!("{},{},{},{}", g.lon_min, g.lon_max, g.lat_min, g.lat_max),
            None => ",,,".to_string(),
        };
        let _ = writeln!(
            manifest,
            "{},images/{}.png,masks/{}.png,{}",
            s.id, s.id, s.id, geo
        );
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
