use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::tensor::Tensor;

use super::Sample;

/// Augmentation policy. Steps run in a fixed order: random scale, center
/// crop/zero-pad to `out_size`, horizontal flip, vertical flip, rotation,
/// Gaussian blur (image only). Masks always resample nearest-neighbor so
/// labels stay binary; rotation and padding fill with background (0).
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub scale_range: (f64, f64),
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotation_deg: f64,
    pub blur_sigma_range: (f64, f64),
    pub blur_p: f64,
    pub out_size: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_range: (0.5, 2.0),
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotation_deg: 30.0,
            blur_sigma_range: (0.1, 2.0),
            blur_p: 0.25,
            out_size: (1024, 1024),
        }
    }
}

impl AugmentConfig {
    pub fn for_size(h: usize, w: usize) -> Self {
        AugmentConfig {
            out_size: (h, w),
            ..Default::default()
        }
    }

    /// No-op policy: unit scale, zero probabilities, zero rotation.
    pub fn identity(h: usize, w: usize) -> Self {
        AugmentConfig {
            scale_range: (1.0, 1.0),
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotation_deg: 0.0,
            blur_sigma_range: (0.1, 2.0),
            blur_p: 0.0,
            out_size: (h, w),
        }
    }
}

/// Apply the augmentation chain; deterministic given the seed. All random
/// draws happen unconditionally and in a fixed order, so toggling one
/// probability never shifts another step's randomness.
pub fn augment(sample: &Sample, config: &AugmentConfig, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = draw_range(&mut rng, config.scale_range);
    let do_hflip = rng.gen_range(0.0..1.0) < config.hflip_p;
    let do_vflip = rng.gen_range(0.0..1.0) < config.vflip_p;
    let angle_deg = if config.rotation_deg > 0.0 {
        rng.gen_range(-config.rotation_deg..=config.rotation_deg)
    } else {
        let _: f64 = rng.gen_range(0.0..1.0);
        0.0
    };
    let do_blur = rng.gen_range(0.0..1.0) < config.blur_p;
    let sigma = draw_range(&mut rng, config.blur_sigma_range);

    let (h, w) = (sample.height(), sample.width());
    let mut image = ImagePlanes::from_tensor(&sample.image);
    let mut mask = MaskGrid {
        h,
        w,
        data: sample.mask.clone(),
    };

    if scale != 1.0 {
        let nh = ((h as f64 * scale).round() as usize).max(1);
        let nw = ((w as f64 * scale).round() as usize).max(1);
        image = image.resize_bilinear(nh, nw);
        mask = mask.resize_nearest(nh, nw);
    }
    let (out_h, out_w) = config.out_size;
    if (image.h, image.w) != (out_h, out_w) {
        image = image.center_crop_or_pad(out_h, out_w);
        mask = mask.center_crop_or_pad(out_h, out_w);
    }
    if do_hflip {
        image.flip_horizontal();
        mask.flip_horizontal();
    }
    if do_vflip {
        image.flip_vertical();
        mask.flip_vertical();
    }
    if angle_deg != 0.0 {
        let radians = angle_deg.to_radians();
        image = image.rotate_bilinear(radians);
        mask = mask.rotate_nearest(radians);
    }
    if do_blur {
        image.gaussian_blur(sigma);
    }

    let out = Sample {
        id: sample.id.clone(),
        image: image.into_tensor(),
        mask: mask.data,
        geo: sample.geo,
    };
    out.validate()?;
    Ok(out)
}

fn draw_range(rng: &mut ChaCha12Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        let _: f64 = rng.gen_range(0.0..1.0);
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Channel-first f32 image with spatial helpers.
struct ImagePlanes {
    h: usize,
    w: usize,
    planes: [Vec<f32>; 3],
}

impl ImagePlanes {
    fn from_tensor(t: &Tensor<f32>) -> Self {
        let (h, w) = (t.shape()[1], t.shape()[2]);
        let d = t.data();
        let hw = h * w;
        ImagePlanes {
            h,
            w,
            planes: [
                d[..hw].to_vec(),
                d[hw..2 * hw].to_vec(),
                d[2 * hw..].to_vec(),
            ],
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(3 * self.h * self.w);
        for p in self.planes {
            data.extend(p);
        }
        Tensor::new(&[3, self.h, self.w], data).expect("plane sizes consistent")
    }

    fn map_planes(&mut self, f: impl Fn(&[f32], usize, usize) -> (Vec<f32>, usize, usize)) {
        let mut nh = self.h;
        let mut nw = self.w;
        for plane in &mut self.planes {
            let (out, oh, ow) = f(plane, self.h, self.w);
            *plane = out;
            nh = oh;
            nw = ow;
        }
        self.h = nh;
        self.w = nw;
    }

    fn resize_bilinear(mut self, nh: usize, nw: usize) -> Self {
        self.map_planes(|src, h, w| (resize_bilinear_plane(src, h, w, nh, nw), nh, nw));
        self
    }

    fn center_crop_or_pad(mut self, oh: usize, ow: usize) -> Self {
        self.map_planes(|src, h, w| (crop_or_pad_plane(src, h, w, oh, ow, 0.0), oh, ow));
        self
    }

    fn flip_horizontal(&mut self) {
        let (h, w) = (self.h, self.w);
        for plane in &mut self.planes {
            for row in 0..h {
                plane[row * w..(row + 1) * w].reverse();
            }
        }
    }

    fn flip_vertical(&mut self) {
        let (h, w) = (self.h, self.w);
        for plane in &mut self.planes {
            for row in 0..h / 2 {
                let (top, bottom) = plane.split_at_mut((h - 1 - row) * w);
                top[row * w..(row + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }

    fn rotate_bilinear(mut self, radians: f64) -> Self {
        self.map_planes(|src, h, w| (rotate_bilinear_plane(src, h, w, radians), h, w));
        self
    }

    fn gaussian_blur(&mut self, sigma: f64) {
        let radius = (3.0 * sigma).ceil() as usize;
        if radius == 0 {
            return;
        }
        let kernel: Vec<f32> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / (2.0 * sigma * sigma)).exp() as f32
            })
            .collect();
        let (h, w) = (self.h, self.w);
        for plane in &mut self.planes {
            // Horizontal then vertical pass, renormalizing over the
            // in-bounds taps so edges keep their brightness.
            let mut tmp = vec![0f32; h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0f32;
                    let mut norm = 0f32;
                    for (k, kv) in kernel.iter().enumerate() {
                        let sx = x as isize + k as isize - radius as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        acc += kv * plane[y * w + sx as usize];
                        norm += kv;
                    }
                    tmp[y * w + x] = acc / norm;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0f32;
                    let mut norm = 0f32;
                    for (k, kv) in kernel.iter().enumerate() {
                        let sy = y as isize + k as isize - radius as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        acc += kv * tmp[sy as usize * w + x];
                        norm += kv;
                    }
                    plane[y * w + x] = (acc / norm).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Binary mask with the same spatial operations, nearest-neighbor only.
struct MaskGrid {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl MaskGrid {
    fn resize_nearest(self, nh: usize, nw: usize) -> Self {
        let mut out = vec![0u8; nh * nw];
        for oy in 0..nh {
            let sy = nearest_source(oy, self.h, nh);
            for ox in 0..nw {
                let sx = nearest_source(ox, self.w, nw);
                out[oy * nw + ox] = self.data[sy * self.w + sx];
            }
        }
        MaskGrid {
            h: nh,
            w: nw,
            data: out,
        }
    }

    fn center_crop_or_pad(self, oh: usize, ow: usize) -> Self {
        let mut out = vec![0u8; oh * ow];
        let (dy, sy) = offsets(self.h, oh);
        let (dx, sx) = offsets(self.w, ow);
        let copy_h = self.h.min(oh);
        let copy_w = self.w.min(ow);
        for y in 0..copy_h {
            for x in 0..copy_w {
                out[(y + dy) * ow + (x + dx)] = self.data[(y + sy) * self.w + (x + sx)];
            }
        }
        MaskGrid {
            h: oh,
            w: ow,
            data: out,
        }
    }

    fn flip_horizontal(&mut self) {
        for row in 0..self.h {
            self.data[row * self.w..(row + 1) * self.w].reverse();
        }
    }

    fn flip_vertical(&mut self) {
        for row in 0..self.h / 2 {
            let (top, bottom) = self.data.split_at_mut((self.h - 1 - row) * self.w);
            top[row * self.w..(row + 1) * self.w].swap_with_slice(&mut bottom[..self.w]);
        }
    }

    fn rotate_nearest(self, radians: f64) -> Self {
        let (h, w) = (self.h, self.w);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = radians.sin_cos();
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = (cos * dy + sin * dx + cy).round();
                let sx = (-sin * dy + cos * dx + cx).round();
                if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                    out[y * w + x] = self.data[sy as usize * w + sx as usize];
                }
            }
        }
        MaskGrid { h, w, data: out }
    }
}

/// Half-pixel-center source index for nearest-neighbor resampling.
fn nearest_source(o: usize, in_extent: usize, out_extent: usize) -> usize {
    let src = (o as f64 + 0.5) * in_extent as f64 / out_extent as f64 - 0.5;
    (src.round().max(0.0) as usize).min(in_extent - 1)
}

/// (destination offset, source offset) centering an `in_extent` run in an
/// `out_extent` run.
fn offsets(in_extent: usize, out_extent: usize) -> (usize, usize) {
    if out_extent >= in_extent {
        ((out_extent - in_extent) / 2, 0)
    } else {
        (0, (in_extent - out_extent) / 2)
    }
}

fn resize_bilinear_plane(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let taps_y = crate::tensor::bilinear_axis_taps(h, nh);
    let taps_x = crate::tensor::bilinear_axis_taps(w, nw);
    let mut out = vec![0f32; nh * nw];
    for (oy, &(y0, y1, ty)) in taps_y.iter().enumerate() {
        let ty = ty as f32;
        for (ox, &(x0, x1, tx)) in taps_x.iter().enumerate() {
            let tx = tx as f32;
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            let top = v00 + (v01 - v00) * tx;
            let bot = v10 + (v11 - v10) * tx;
            out[oy * nw + ox] = top + (bot - top) * ty;
        }
    }
    out
}

fn crop_or_pad_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize, fill: f32) -> Vec<f32> {
    let mut out = vec![fill; oh * ow];
    let (dy, sy) = offsets(h, oh);
    let (dx, sx) = offsets(w, ow);
    for y in 0..h.min(oh) {
        let src_row = &src[(y + sy) * w + sx..][..w.min(ow)];
        out[(y + dy) * ow + dx..][..w.min(ow)].copy_from_slice(src_row);
    }
    out
}

fn rotate_bilinear_plane(src: &[f32], h: usize, w: usize, radians: f64) -> Vec<f32> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = radians.sin_cos();
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = cos * dy + sin * dx + cy;
            let sx = -sin * dy + cos * dx + cx;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let ty = (sy - y0) as f32;
            let tx = (sx - x0) as f32;
            let mut acc = 0f32;
            for (dy_i, wy) in [(0isize, 1.0 - ty), (1, ty)] {
                for (dx_i, wx) in [(0isize, 1.0 - tx), (1, tx)] {
                    let yy = y0 as isize + dy_i;
                    let xx = x0 as isize + dx_i;
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += wy * wx * src[yy as usize * w + xx as usize];
                    }
                }
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    out
}
