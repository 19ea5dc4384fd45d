use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{sichuan_regions, write_dataset, GeoBox, Sample};

/// Synthetic dataset recipe: bright textured blobs (elliptical bodies and
/// arcuate bands) on a darker textured background, with exact per-sample
/// moraine-fraction control.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub size: usize,
    pub fraction_range: (f64, f64),
    pub seed: u64,
}

/// Generate `n` samples in memory. Each sample's moraine fraction is
/// pinned to `round(f·size²)/size²` for a draw f from the requested
/// range, geo boxes alternate between the two reference regions, and the
/// whole dataset is a pure function of the seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Sample>> {
    validate(config)?;
    let regions = sichuan_regions();
    (0..config.n)
        .map(|i| {
            let seed = config.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let region = &regions[i % regions.len()];
            render_sample(format!("synth{i:04}"), config, seed, &region.bounds)
        })
        .collect()
}

/// Generate and persist: PNG pairs under `dir` plus `manifest.csv`.
pub fn generate_synthetic_to(dir: &Path, config: &SynthConfig) -> Result<(Vec<Sample>, PathBuf)> {
    let samples = generate_synthetic(config)?;
    let manifest = write_dataset(dir, &samples)?;
    Ok((samples, manifest))
}

fn validate(config: &SynthConfig) -> Result<()> {
    let (lo, hi) = config.fraction_range;
    if config.n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    if config.size == 0 || !config.size.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "synthetic tile size must be a positive multiple of 16, got {}",
            config.size
        )));
    }
    if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
        return Err(Error::Config(format!(
            "infeasible moraine fraction range ({lo}, {hi})"
        )));
    }
    Ok(())
}

fn render_sample(id: String, config: &SynthConfig, seed: u64, region: &GeoBox) -> Result<Sample> {
    let size = config.size;
    let total = size * size;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let (lo, hi) = config.fraction_range;
    let fraction = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let target = (fraction * total as f64).round() as usize;

    let mask = paint_mask(&mut rng, size, target);
    let image = paint_image(&mut rng, size, &mask);

    let (clon, clat) = (
        rng.gen_range(region.lon_min + 0.01..region.lon_max - 0.01),
        rng.gen_range(region.lat_min + 0.01..region.lat_max - 0.01),
    );
    let geo = GeoBox::new(clon - 0.005, clon + 0.005, clat - 0.005, clat + 0.005)?;

    let sample = Sample {
        id,
        image,
        mask,
        geo: Some(geo),
    };
    sample.validate()?;
    Ok(sample)
}

/// Paint elliptical bodies and arcuate bands until exactly `target`
/// pixels are set: blob proposals that would overshoot shrink, and the
/// last few pixels grow off an existing blob edge (or scatter) so the
/// bookkeeping lands exactly.
fn paint_mask(rng: &mut ChaCha12Rng, size: usize, target: usize) -> Vec<u8> {
    let mut mask = vec![0u8; size * size];
    let mut painted = 0usize;
    let mut attempts = 0usize;
    while painted < target && attempts < 10_000 {
        attempts += 1;
        let remaining = target - painted;
        if remaining <= 48 {
            painted += grow_pixels(rng, &mut mask, size, remaining);
            continue;
        }
        // Few large, mostly round bodies rather than many fragments, so
        // the landforms stay resolvable at desk-scale tile sizes.
        let max_area = (remaining as f64 * 0.95).max(96.0);
        let min_area = (max_area * 0.55).max(96.0 - 1e-9);
        let area = rng.gen_range(min_area..=max_area);
        let aspect = rng.gen_range(0.85..1.4);
        let arcuate = rng.gen_bool(0.25);
        let inner = if arcuate {
            rng.gen_range(0.3..0.45)
        } else {
            0.0
        };
        // Bands and crescents cover less than the full ellipse; inflate
        // the axes so the painted area still tracks the budget.
        let fill = if arcuate {
            (1.0 - inner * inner) / 2.0
        } else {
            1.0
        };
        let radius = (area / (std::f64::consts::PI * fill)).sqrt();
        let (a, b) = ((radius * aspect).max(2.0), (radius / aspect).max(2.0));
        let margin = 0.2 * size as f64;
        let cy = rng.gen_range(margin..size as f64 - margin);
        let cx = rng.gen_range(margin..size as f64 - margin);
        let phi = rng.gen_range(0.0..std::f64::consts::PI);

        let new_pixels = stamp_ellipse(&mut mask, size, cy, cx, a, b, phi, inner, remaining);
        painted += new_pixels;
    }
    // Pathological targets (close to the whole tile) finish pixelwise.
    while painted < target {
        painted += grow_pixels(rng, &mut mask, size, target - painted);
    }
    mask
}

/// Stamp an ellipse (or elliptical band when `inner > 0`), but only up to
/// `budget` fresh pixels; returns how many were newly set.
#[allow(clippy::too_many_arguments)]
fn stamp_ellipse(
    mask: &mut [u8],
    size: usize,
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    phi: f64,
    inner: f64,
    budget: usize,
) -> usize {
    let (sin, cos) = phi.sin_cos();
    let reach = a.max(b).ceil() as isize + 1;
    let mut fresh = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let y = cy as isize + dy;
            let x = cx as isize + dx;
            if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
                continue;
            }
            let fy = y as f64 - cy;
            let fx = x as f64 - cx;
            let u = (fx * cos + fy * sin) / a;
            let v = (-fx * sin + fy * cos) / b;
            let r2 = u * u + v * v;
            let in_band = r2 <= 1.0 && r2 >= inner * inner;
            // Arcuate bands keep only one side, giving a crescent shape.
            let keep = if inner > 0.0 {
                in_band && v <= 0.0
            } else {
                in_band
            };
            if keep {
                let idx = y as usize * size + x as usize;
                if mask[idx] == 0 {
                    fresh.push(idx);
                }
            }
        }
    }
    let take = fresh.len().min(budget);
    for idx in &fresh[..take] {
        mask[*idx] = 1;
    }
    take
}

/// Set up to `want` pixels adjacent to existing moraine (or anywhere on an
/// empty mask); returns how many were set.
fn grow_pixels(rng: &mut ChaCha12Rng, mask: &mut [u8], size: usize, want: usize) -> usize {
    let mut frontier: Vec<usize> = Vec::new();
    for idx in 0..mask.len() {
        if mask[idx] == 1 {
            let y = idx / size;
            let x = idx % size;
            for (ny, nx) in [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ] {
                if ny < size && nx < size && mask[ny * size + nx] == 0 {
                    frontier.push(ny * size + nx);
                }
            }
        }
    }
    if frontier.is_empty() {
        frontier = (0..mask.len()).filter(|i| mask[*i] == 0).collect();
    }
    let mut set = 0;
    while set < want && !frontier.is_empty() {
        let pick = rng.gen_range(0..frontier.len());
        let idx = frontier.swap_remove(pick);
        if mask[idx] == 0 {
            mask[idx] = 1;
            set += 1;
        }
    }
    set
}

/// Textured rendering: darker speckled background with a soft gradient,
/// brighter banded texture on moraine pixels. Values are quantized to the
/// 8-bit grid so a PNG round trip is bitwise exact.
fn paint_image(rng: &mut ChaCha12Rng, size: usize, mask: &[u8]) -> Tensor<f32> {
    let bg_base = rng.gen_range(0.18..0.32);
    let fg_base = rng.gen_range(0.58..0.78);
    let grad_x = rng.gen_range(-0.05..0.05);
    let grad_y = rng.gen_range(-0.05..0.05);
    let band_angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let band_freq = rng.gen_range(0.25..0.7);
    let channel_tint = [
        rng.gen_range(-0.02..0.02),
        rng.gen_range(-0.02..0.02),
        rng.gen_range(-0.02..0.02),
    ];

    let hw = size * size;
    let mut data = vec![0f32; 3 * hw];
    let (bsin, bcos) = band_angle.sin_cos();
    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let speckle = rng.gen_range(-0.06..0.06);
            let value = if mask[p] == 1 {
                let band = 0.04 * (band_freq * (x as f64 * bcos + y as f64 * bsin)).sin();
                fg_base + speckle + band as f32
            } else {
                let gx = grad_x * (x as f64 / size as f64 - 0.5) as f32;
                let gy = grad_y * (y as f64 / size as f64 - 0.5) as f32;
                bg_base + speckle + gx + gy
            };
            for ch in 0..3 {
                let v = (value + channel_tint[ch]).clamp(0.0, 1.0);
                data[ch * hw + p] = quantize(v);
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("image buffer consistent")
}

fn quantize(v: f32) -> f32 {
    (v * 255.0).round() / 255.0
}
