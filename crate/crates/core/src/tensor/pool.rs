use crate::error::{Error, Result};

use super::graph::{Graph, Op, TensorId};
use super::scalar::Scalar;

impl<S: Scalar> Graph<S> {
    /// Per-channel mean over the spatial extent: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        if h * w == 0 {
            return Err(Error::Shape("global_avg_pool: empty spatial extent".into()));
        }
        let count = S::from_f64((h * w) as f64);
        let mut data = vec![S::ZERO; n * c];
        let ad = self.data(a);
        for (plane, out) in data.iter_mut().enumerate() {
            let src = &ad[plane * h * w..(plane + 1) * h * w];
            let mut acc = S::ZERO;
            for v in src {
                acc += *v;
            }
            *out = acc / count;
        }
        let rq = self.requires(a);
        self.finish(
            "global_avg_pool",
            data,
            vec![n, c, 1, 1],
            rq,
            Op::GlobalAvgPool { a },
        )
    }

    /// Per-channel max over the spatial extent. The subgradient routes to
    /// the lowest-index maximum, which keeps backward deterministic.
    pub fn global_max_pool(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        if h * w == 0 {
            return Err(Error::Shape("global_max_pool: empty spatial extent".into()));
        }
        let ad = self.data(a);
        let mut data = vec![S::ZERO; n * c];
        let mut argmax = vec![0usize; n * c];
        for plane in 0..n * c {
            let base = plane * h * w;
            let src = &ad[base..base + h * w];
            let (mut best_i, mut best) = (0usize, src[0]);
            for (i, v) in src.iter().enumerate().skip(1) {
                if *v > best {
                    best = *v;
                    best_i = i;
                }
            }
            data[plane] = best;
            argmax[plane] = base + best_i;
        }
        let rq = self.requires(a);
        self.finish(
            "global_max_pool",
            data,
            vec![n, c, 1, 1],
            rq,
            Op::GlobalMaxPool { a, argmax },
        )
    }

    /// Mean over channels per spatial location: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        let count = S::from_f64(c as f64);
        let hw = h * w;
        let mut data = vec![S::ZERO; n * hw];
        let ad = self.data(a);
        for img in 0..n {
            for ch in 0..c {
                let src = &ad[(img * c + ch) * hw..][..hw];
                let dst = &mut data[img * hw..(img + 1) * hw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += *v;
                }
            }
        }
        for v in data.iter_mut() {
            *v /= count;
        }
        let rq = self.requires(a);
        self.finish(
            "channel_mean",
            data,
            vec![n, 1, h, w],
            rq,
            Op::ChannelMean { a },
        )
    }

    /// Max over channels per spatial location, lowest-index tie routing.
    pub fn channel_max(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        let hw = h * w;
        let ad = self.data(a);
        let mut data = vec![S::ZERO; n * hw];
        let mut argmax = vec![0usize; n * hw];
        for img in 0..n {
            for p in 0..hw {
                let mut best = ad[img * c * hw + p];
                let mut best_idx = img * c * hw + p;
                for ch in 1..c {
                    let idx = (img * c + ch) * hw + p;
                    if ad[idx] > best {
                        best = ad[idx];
                        best_idx = idx;
                    }
                }
                data[img * hw + p] = best;
                argmax[img * hw + p] = best_idx;
            }
        }
        let rq = self.requires(a);
        self.finish(
            "channel_max",
            data,
            vec![n, 1, h, w],
            rq,
            Op::ChannelMax { a, argmax },
        )
    }

    /// Windowed average pool, no padding: `[N,C,H,W] -> [N,C,H',W']`.
    pub fn avg_pool2d(&mut self, a: TensorId, win: usize, stride: usize) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        let (oh, ow) = pool_extent(h, w, win, stride)?;
        let count = S::from_f64((win * win) as f64);
        let ad = self.data(a);
        let mut data = vec![S::ZERO; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &ad[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = S::ZERO;
                    for ky in 0..win {
                        for kx in 0..win {
                            acc += src[(oy * stride + ky) * w + (ox * stride + kx)];
                        }
                    }
                    data[(plane * oh + oy) * ow + ox] = acc / count;
                }
            }
        }
        let rq = self.requires(a);
        self.finish(
            "avg_pool2d",
            data,
            vec![n, c, oh, ow],
            rq,
            Op::AvgPool2d { a, win, stride },
        )
    }

    /// Windowed max pool, no padding, lowest-index tie routing.
    pub fn max_pool2d(&mut self, a: TensorId, win: usize, stride: usize) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(a)?;
        let (oh, ow) = pool_extent(h, w, win, stride)?;
        let ad = self.data(a);
        let mut data = vec![S::ZERO; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ad[base + (oy * stride) * w + ox * stride];
                    let mut best_idx = base + (oy * stride) * w + ox * stride;
                    for ky in 0..win {
                        for kx in 0..win {
                            let idx = base + (oy * stride + ky) * w + (ox * stride + kx);
                            if ad[idx] > best {
                                best = ad[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let rq = self.requires(a);
        self.finish(
            "max_pool2d",
            data,
            vec![n, c, oh, ow],
            rq,
            Op::MaxPool2d { a, argmax },
        )
    }
}

fn pool_extent(h: usize, w: usize, win: usize, stride: usize) -> Result<(usize, usize)> {
    if win == 0 || stride == 0 {
        return Err(Error::Shape(
            "pool: window and stride must be positive".into(),
        ));
    }
    if h < win || w < win {
        return Err(Error::Shape(format!(
            "pool: window {win} exceeds spatial extent {h}x{w}"
        )));
    }
    Ok(((h - win) / stride + 1, (w - win) / stride + 1))
}

pub(crate) fn backward<S: Scalar>(
    graph: &mut Graph<S>,
    out: usize,
    g: &[S],
    a: TensorId,
    op: &Op<S>,
) -> Result<()> {
    if !graph.requires(a) {
        return Ok(());
    }
    let (n, c, h, w) = graph.nchw(a)?;
    let mut da = vec![S::ZERO; n * c * h * w];
    match op {
        Op::GlobalAvgPool { .. } => {
            let inv = S::from_f64(1.0 / (h * w) as f64);
            for plane in 0..n * c {
                let gv = g[plane] * inv;
                for v in da[plane * h * w..(plane + 1) * h * w].iter_mut() {
                    *v += gv;
                }
            }
        }
        Op::GlobalMaxPool { argmax, .. } => {
            for (plane, idx) in argmax.iter().enumerate() {
                da[*idx] += g[plane];
            }
        }
        Op::ChannelMean { .. } => {
            let inv = S::from_f64(1.0 / c as f64);
            let hw = h * w;
            for img in 0..n {
                for ch in 0..c {
                    let dst = &mut da[(img * c + ch) * hw..][..hw];
                    let src = &g[img * hw..(img + 1) * hw];
                    for (d, gv) in dst.iter_mut().zip(src) {
                        *d += *gv * inv;
                    }
                }
            }
        }
        Op::ChannelMax { argmax, .. } => {
            for (p, idx) in argmax.iter().enumerate() {
                da[*idx] += g[p];
            }
        }
        Op::AvgPool2d { win, stride, .. } => {
            let out_shape = graph.shape(TensorId(out));
            let (oh, ow) = (out_shape[2], out_shape[3]);
            let inv = S::from_f64(1.0 / (win * win) as f64);
            for plane in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(plane * oh + oy) * ow + ox] * inv;
                        for ky in 0..*win {
                            for kx in 0..*win {
                                da[plane * h * w + (oy * stride + ky) * w + (ox * stride + kx)] +=
                                    gv;
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool2d { argmax, .. } => {
            for (o, idx) in argmax.iter().enumerate() {
                da[*idx] += g[o];
            }
        }
        _ => unreachable!("pool backward dispatched with non-pool op"),
    }
    graph.accum(a, &da);
    Ok(())
}
