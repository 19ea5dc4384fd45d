use crate::error::{Error, Result};

use super::graph::{Graph, Op, TensorId};
use super::scalar::Scalar;

/// Hyperparameters of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    /// Output extent along one spatial axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        if input + 2 * self.padding < span {
            return Err(Error::Shape(format!(
                "conv2d: kernel span {span} exceeds padded input {}",
                input + 2 * self.padding
            )));
        }
        Ok((input + 2 * self.padding - span) / self.stride + 1)
    }
}

impl<S: Scalar> Graph<S> {
    /// 2-D convolution with zero padding.
    ///
    /// `x [N, Cin, H, W]`, `w [Cout, Cin/groups, kh, kw]`, optional bias
    /// `[Cout]`. Output `[N, Cout, H', W']` with
    /// `H' = (H + 2·pad − dilation·(kh−1) − 1)/stride + 1`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv2dSpec,
    ) -> Result<TensorId> {
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(Error::Shape(
                "conv2d: stride, dilation and groups must be positive".into(),
            ));
        }
        let (n, cin, h, width) = self.nchw(x)?;
        let sw = self.shape(w);
        if sw.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d: weight must be 4-D, got {sw:?}"
            )));
        }
        let (cout, cin_g, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(Error::Shape(format!(
                "conv2d: groups {} must divide Cin {} and Cout {}",
                spec.groups, cin, cout
            )));
        }
        if cin_g != cin / spec.groups {
            return Err(Error::Shape(format!(
                "conv2d: weight expects Cin/groups = {cin_g}, input gives {}",
                cin / spec.groups
            )));
        }
        if let Some(bid) = b {
            if self.shape(bid) != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d: bias shape {:?} != [{cout}]",
                    self.shape(bid)
                )));
            }
        }
        let oh = spec.out_extent(h, kh)?;
        let ow = spec.out_extent(width, kw)?;
        let cout_g = cout / spec.groups;

        let pointwise =
            kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == 0 && spec.dilation == 1;
        let mut data = vec![S::ZERO; n * cout * oh * ow];
        {
            let xd = self.data(x);
            let wd = self.data(w);
            let bd = b.map(|bid| self.data(bid).to_vec());
            if pointwise {
                // 1x1 stride-1 convolution is a per-pixel channel mix;
                // the inner loop runs contiguously over the plane.
                let hw = h * width;
                for img in 0..n {
                    for grp in 0..spec.groups {
                        for ocl in 0..cout_g {
                            let oc = grp * cout_g + ocl;
                            let out_plane = &mut data[(img * cout + oc) * hw..][..hw];
                            if let Some(bv) = bd.as_ref() {
                                out_plane.fill(bv[oc]);
                            }
                            for icl in 0..cin_g {
                                let ic = grp * cin_g + icl;
                                let wv = wd[oc * cin_g + icl];
                                let x_plane = &xd[(img * cin + ic) * hw..][..hw];
                                for (o, xv) in out_plane.iter_mut().zip(x_plane) {
                                    *o += wv * *xv;
                                }
                            }
                        }
                    }
                }
            } else {
                for img in 0..n {
                    for grp in 0..spec.groups {
                        for ocl in 0..cout_g {
                            let oc = grp * cout_g + ocl;
                            let bias = bd.as_ref().map_or(S::ZERO, |bv| bv[oc]);
                            let out_plane = &mut data[(img * cout + oc) * oh * ow..][..oh * ow];
                            out_plane.fill(bias);
                            for icl in 0..cin_g {
                                let ic = grp * cin_g + icl;
                                let x_plane = &xd[(img * cin + ic) * h * width..][..h * width];
                                let w_plane = &wd[(oc * cin_g + icl) * kh * kw..][..kh * kw];
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let wv = w_plane[ky * kw + kx];
                                        accumulate_tap(
                                            out_plane, x_plane, wv, oh, ow, h, width, spec, ky, kx,
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut ids = vec![x, w];
        if let Some(bid) = b {
            ids.push(bid);
        }
        let rq = self.any_requires(&ids);
        self.finish(
            "conv2d",
            data,
            vec![n, cout, oh, ow],
            rq,
            Op::Conv2d { x, w, b, spec },
        )
    }
}

/// Accumulate one kernel tap's contribution over every valid output
/// position. Valid ranges are computed once per row, so the inner loops
/// are branch-free (and contiguous for stride 1).
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap<S: Scalar>(
    out: &mut [S],
    xp: &[S],
    wv: S,
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
    spec: Conv2dSpec,
    ky: usize,
    kx: usize,
) {
    let s = spec.stride as isize;
    let off_y = (ky * spec.dilation) as isize - spec.padding as isize;
    let off_x = (kx * spec.dilation) as isize - spec.padding as isize;
    let Some((oy0, oy1)) = valid_range(oh, h, s, off_y) else {
        return;
    };
    let Some((ox0, ox1)) = valid_range(ow, w, s, off_x) else {
        return;
    };
    for oy in oy0..=oy1 {
        let iy = (oy as isize * s + off_y) as usize;
        let out_row = &mut out[oy * ow..][..ow];
        let x_row = &xp[iy * w..][..w];
        if s == 1 {
            let dst = &mut out_row[ox0..=ox1];
            let src = &x_row[(ox0 as isize + off_x) as usize..][..dst.len()];
            for (o, xv) in dst.iter_mut().zip(src) {
                *o += wv * *xv;
            }
        } else {
            for ox in ox0..=ox1 {
                out_row[ox] += wv * x_row[(ox as isize * s + off_x) as usize];
            }
        }
    }
}

/// Output positions whose tap lands inside `[0, in_extent)`.
#[inline]
fn valid_range(o_extent: usize, in_extent: usize, s: isize, off: isize) -> Option<(usize, usize)> {
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi_num = in_extent as isize - 1 - off;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num / s).min(o_extent as isize - 1);
    if lo > hi {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Backward rule: per kernel tap, gradient scatters into dx (transposed
/// taps) and reduces into dw; the bias gradient is the per-channel sum.
pub(crate) fn backward<S: Scalar>(
    graph: &mut Graph<S>,
    out: usize,
    g: &[S],
    x: TensorId,
    w: TensorId,
    b: Option<TensorId>,
    spec: &Conv2dSpec,
) -> Result<()> {
    let (n, cin, h, width) = graph.nchw(x)?;
    let sw = graph.shape(w);
    let (cout, cin_g, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
    let out_shape = graph.shape(TensorId(out));
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let cout_g = cout / spec.groups;
    let spec = *spec;

    let need_dx = graph.requires(x);
    let need_dw = graph.requires(w);

    let mut dx = if need_dx {
        vec![S::ZERO; n * cin * h * width]
    } else {
        Vec::new()
    };
    let mut dw = if need_dw {
        vec![S::ZERO; cout * cin_g * kh * kw]
    } else {
        Vec::new()
    };

    if need_dx || need_dw {
        let xd = graph.data(x).to_vec();
        let wd = graph.data(w).to_vec();
        let s = spec.stride as isize;
        let hw = h * width;
        let ohw = oh * ow;
        for img in 0..n {
            for grp in 0..spec.groups {
                for ocl in 0..cout_g {
                    let oc = grp * cout_g + ocl;
                    let g_plane = &g[(img * cout + oc) * ohw..][..ohw];
                    for icl in 0..cin_g {
                        let ic = grp * cin_g + icl;
                        let x_plane = &xd[(img * cin + ic) * hw..][..hw];
                        let w_base = (oc * cin_g + icl) * kh * kw;
                        for ky in 0..kh {
                            let off_y = (ky * spec.dilation) as isize - spec.padding as isize;
                            let Some((oy0, oy1)) = valid_range(oh, h, s, off_y) else {
                                continue;
                            };
                            for kx in 0..kw {
                                let off_x = (kx * spec.dilation) as isize - spec.padding as isize;
                                let Some((ox0, ox1)) = valid_range(ow, width, s, off_x) else {
                                    continue;
                                };
                                let wv = wd[w_base + ky * kw + kx];
                                let mut tap_dw = S::ZERO;
                                for oy in oy0..=oy1 {
                                    let iy = (oy as isize * s + off_y) as usize;
                                    let g_row = &g_plane[oy * ow..][..ow];
                                    if s == 1 {
                                        let ix0 = (ox0 as isize + off_x) as usize;
                                        let len = ox1 - ox0 + 1;
                                        let gs = &g_row[ox0..ox0 + len];
                                        if need_dw {
                                            let xs = &x_plane[iy * width + ix0..][..len];
                                            for (gv, xv) in gs.iter().zip(xs) {
                                                tap_dw += *gv * *xv;
                                            }
                                        }
                                        if need_dx {
                                            let dst = &mut dx
                                                [(img * cin + ic) * hw + iy * width + ix0..][..len];
                                            for (d, gv) in dst.iter_mut().zip(gs) {
                                                *d += wv * *gv;
                                            }
                                        }
                                    } else {
                                        #[allow(clippy::needless_range_loop)]
                                        for ox in ox0..=ox1 {
                                            let ix = (ox as isize * s + off_x) as usize;
                                            let gv = g_row[ox];
                                            if need_dw {
                                                tap_dw += gv * x_plane[iy * width + ix];
                                            }
                                            if need_dx {
                                                dx[(img * cin + ic) * hw + iy * width + ix] +=
                                                    wv * gv;
                                            }
                                        }
                                    }
                                }
                                if need_dw {
                                    dw[w_base + ky * kw + kx] += tap_dw;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if need_dx {
        graph.accum(x, &dx);
    }
    if need_dw {
        graph.accum(w, &dw);
    }
    if let Some(bid) = b {
        if graph.requires(bid) {
            let mut db = vec![S::ZERO; cout];
            for img in 0..n {
                for (oc, slot) in db.iter_mut().enumerate() {
                    let base = (img * cout + oc) * oh * ow;
                    for v in &g[base..base + oh * ow] {
                        *slot += *v;
                    }
                }
            }
            graph.accum(bid, &db);
        }
    }
    Ok(())
}
