//! Naive reference implementations used to validate the tensor engine and
//! the attention equations. Everything here is written as plain nested
//! loops over f64 slices, with no shared code paths into the engine, so a
//! bug cannot hide on both sides of a comparison.

/// Direct six-nested-loop convolution. Same contract as `Graph::conv2d`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    x_shape: (usize, usize, usize, usize),
    w: &[f64],
    w_shape: (usize, usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    dilation: usize,
    groups: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let (n, cin, h, width) = x_shape;
    let (cout, cin_g, kh, kw) = w_shape;
    assert_eq!(cin_g, cin / groups);
    let oh = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (width + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; n * cout * oh * ow];
    for img in 0..n {
        for oc in 0..cout {
            let grp = oc / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for icl in 0..cin_g {
                        let ic = grp * cin_g + icl;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                                let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= width as isize {
                                    continue;
                                }
                                let xv =
                                    x[((img * cin + ic) * h + iy as usize) * width + ix as usize];
                                let wv = w[((oc * cin_g + icl) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((img * cout + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, (n, cout, oh, ow))
}

/// Loop-reduction global average pool: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool(x: &[f64], shape: (usize, usize, usize, usize)) -> Vec<f64> {
    let (n, c, h, w) = shape;
    let mut out = vec![0.0; n * c];
    for plane in 0..n * c {
        let mut acc = 0.0;
        for p in 0..h * w {
            acc += x[plane * h * w + p];
        }
        out[plane] = acc / (h * w) as f64;
    }
    out
}

/// Loop-reduction global max pool: `[N,C,H,W] -> [N,C]`.
pub fn global_max_pool(x: &[f64], shape: (usize, usize, usize, usize)) -> Vec<f64> {
    let (n, c, h, w) = shape;
    let mut out = vec![0.0; n * c];
    for plane in 0..n * c {
        let mut best = f64::NEG_INFINITY;
        for p in 0..h * w {
            best = best.max(x[plane * h * w + p]);
        }
        out[plane] = best;
    }
    out
}

/// Mean over channels per spatial location: `[N,C,H,W] -> [N,H,W]`.
pub fn channel_mean(x: &[f64], shape: (usize, usize, usize, usize)) -> Vec<f64> {
    let (n, c, h, w) = shape;
    let mut out = vec![0.0; n * h * w];
    for img in 0..n {
        for p in 0..h * w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += x[(img * c + ch) * h * w + p];
            }
            out[img * h * w + p] = acc / c as f64;
        }
    }
    out
}

/// Max over channels per spatial location: `[N,C,H,W] -> [N,H,W]`.
pub fn channel_max(x: &[f64], shape: (usize, usize, usize, usize)) -> Vec<f64> {
    let (n, c, h, w) = shape;
    let mut out = vec![0.0; n * h * w];
    for img in 0..n {
        for p in 0..h * w {
            let mut best = f64::NEG_INFINITY;
            for ch in 0..c {
                best = best.max(x[(img * c + ch) * h * w + p]);
            }
            out[img * h * w + p] = best;
        }
    }
    out
}

/// Dot-product affine map: `x [B, Din]`, `w [Dout, Din]`, bias `[Dout]`.
pub fn linear(
    x: &[f64],
    batch: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * dout];
    for r in 0..batch {
        for o in 0..dout {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += x[r * din + i] * w[o * din + i];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

/// Per-pixel weighted cross-entropy summed explicitly, mean over pixels.
pub fn softmax_ce(
    logits: &[f64],
    shape: (usize, usize, usize, usize),
    targets: &[u32],
    class_weights: &[f64],
) -> f64 {
    let (n, c, h, w) = shape;
    let hw = h * w;
    let mut total = 0.0;
    for img in 0..n {
        for p in 0..hw {
            let z: Vec<f64> = (0..c).map(|ch| logits[(img * c + ch) * hw + p]).collect();
            let maxv = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = z.iter().map(|v| (v - maxv).exp()).sum();
            let y = targets[img * hw + p] as usize;
            let log_p = (z[y] - maxv - denom.ln()).max(-30.0);
            total -= class_weights[y] * log_p;
        }
    }
    total / (n * hw) as f64
}

/// Channel attention map evaluated directly: shared two-layer MLP applied
/// to the average- and max-pooled descriptors, summed, then sigmoid.
/// Layer 1 (`w1 [hidden, C]`) has no bias; layer 2 (`w2 [C, hidden]`,
/// `b2 [C]`) has one.
#[allow(clippy::too_many_arguments)]
pub fn channel_attention(
    x: &[f64],
    shape: (usize, usize, usize, usize),
    w1: &[f64],
    hidden: usize,
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let (n, c, _, _) = shape;
    let avg = global_avg_pool(x, shape);
    let max = global_max_pool(x, shape);
    let mlp = |desc: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n * c];
        for img in 0..n {
            let row = &desc[img * c..(img + 1) * c];
            let mut mid = vec![0.0; hidden];
            for (hid, m) in mid.iter_mut().enumerate() {
                let mut acc = 0.0;
                for ch in 0..c {
                    acc += w1[hid * c + ch] * row[ch];
                }
                *m = acc.max(0.0);
            }
            for ch in 0..c {
                let mut acc = b2[ch];
                for (hid, m) in mid.iter().enumerate() {
                    acc += w2[ch * hidden + hid] * m;
                }
                out[img * c + ch] = acc;
            }
        }
        out
    };
    let a = mlp(&avg);
    let b = mlp(&max);
    a.iter()
        .zip(&b)
        .map(|(x, y)| 1.0 / (1.0 + (-(x + y)).exp()))
        .collect()
}

/// Spatial attention map evaluated directly: channel mean and max maps
/// stacked to two channels, 7x7 convolution with padding 3 and bias,
/// then sigmoid. Kernel layout `[2, 7, 7]` (mean plane first).
pub fn spatial_attention(
    x: &[f64],
    shape: (usize, usize, usize, usize),
    kernel: &[f64],
    bias: f64,
) -> Vec<f64> {
    let (n, _, h, w) = shape;
    let mean = channel_mean(x, shape);
    let max = channel_max(x, shape);
    let mut stacked = vec![0.0; n * 2 * h * w];
    for img in 0..n {
        stacked[img * 2 * h * w..img * 2 * h * w + h * w]
            .copy_from_slice(&mean[img * h * w..(img + 1) * h * w]);
        stacked[img * 2 * h * w + h * w..(img + 1) * 2 * h * w]
            .copy_from_slice(&max[img * h * w..(img + 1) * h * w]);
    }
    let (conv, _) = conv2d(
        &stacked,
        (n, 2, h, w),
        kernel,
        (1, 2, 7, 7),
        Some(&[bias]),
        1,
        3,
        1,
        1,
    );
    conv.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// Per-pixel confusion counting for a binary mask pair.
/// Returns (tp, fp, fn, tn) for the positive class `1`.
pub fn confusion(pred: &[u8], gt: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fng, mut tn) = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gt) {
        match (*p, *g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fng += 1,
            _ => tn += 1,
        }
    }
    (tp, fp, fng, tn)
}
