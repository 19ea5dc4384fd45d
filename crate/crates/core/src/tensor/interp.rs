use crate::error::{Error, Result};

use super::graph::{Graph, Op, TensorId};
use super::scalar::Scalar;

/// Per-axis interpolation taps for the half-pixel-center convention
/// (align_corners = false): `src = max(0, (dst + 0.5)·in/out − 0.5)`,
/// low tap at floor(src), high tap clamped to the last row/column.
pub fn axis_taps(in_extent: usize, out_extent: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_extent as f64 / out_extent as f64;
    (0..out_extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_extent - 1);
            let hi = (lo + 1).min(in_extent - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl<S: Scalar> Graph<S> {
    /// Bilinear upsampling to `(out_h, out_w)` with the half-pixel-center
    /// (align_corners = false) convention. Upsampling only: target extents
    /// must be at least the input extents.
    pub fn upsample_bilinear(
        &mut self,
        a: TensorId,
        out_h: usize,
        out_w: usize,
    ) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape(
                "upsample_bilinear: non-positive target size".into(),
            ));
        }
        if out_h < h || out_w < w {
            return Err(Error::Shape(format!(
                "upsample_bilinear: target {out_h}x{out_w} smaller than input {h}x{w}"
            )));
        }
        let ys = axis_taps(h, out_h);
        let xs = axis_taps(w, out_w);
        let ad = self.data(a);
        let mut data = vec![S::ZERO; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &ad[plane * h * w..(plane + 1) * h * w];
            let dst = &mut data[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                let ty = S::from_f64(ty);
                for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                    let tx = S::from_f64(tx);
                    let v00 = src[y0 * w + x0];
                    let v01 = src[y0 * w + x1];
                    let v10 = src[y1 * w + x0];
                    let v11 = src[y1 * w + x1];
                    let top = v00 + (v01 - v00) * tx;
                    let bot = v10 + (v11 - v10) * tx;
                    dst[oy * out_w + ox] = top + (bot - top) * ty;
                }
            }
        }
        let rq = self.requires(a);
        self.finish(
            "upsample_bilinear",
            data,
            vec![n, c, out_h, out_w],
            rq,
            Op::UpsampleBilinear { a },
        )
    }
}

/// Transpose of the interpolation weights: each output gradient scatters
/// into its four source taps.
pub(crate) fn backward<S: Scalar>(
    graph: &mut Graph<S>,
    out: usize,
    g: &[S],
    a: TensorId,
) -> Result<()> {
    if !graph.requires(a) {
        return Ok(());
    }
    let (n, c, h, w) = graph.nchw(a)?;
    let os = graph.shape(TensorId(out));
    let (out_h, out_w) = (os[2], os[3]);
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut da = vec![S::ZERO; n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut da[plane * h * w..(plane + 1) * h * w];
        let gsrc = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            let ty = S::from_f64(ty);
            let my = S::ONE - ty;
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let tx = S::from_f64(tx);
                let mx = S::ONE - tx;
                let gv = gsrc[oy * out_w + ox];
                dst[y0 * w + x0] += gv * my * mx;
                dst[y0 * w + x1] += gv * my * tx;
                dst[y1 * w + x0] += gv * ty * mx;
                dst[y1 * w + x1] += gv * ty * tx;
            }
        }
    }
    graph.accum(a, &da);
    Ok(())
}
