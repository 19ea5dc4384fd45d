use crate::error::{Error, Result};

use super::graph::{Graph, Op, TensorId};
use super::scalar::Scalar;

/// Per-channel batch statistics produced by a training-mode forward pass.
/// The variance is the biased estimate used for normalization; callers
/// update running statistics from these values.
#[derive(Debug, Clone)]
pub struct BatchStats<S: Scalar> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    /// Elements per channel (N·H·W), needed for the unbiased correction
    /// when folding into running variance.
    pub count: usize,
}

impl<S: Scalar> Graph<S> {
    /// Training-mode batch normalization over `[N,C,H,W]`: normalizes each
    /// channel by the batch mean and biased variance, then applies the
    /// learnable affine `gamma`, `beta` (shape `[C]`).
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<(TensorId, BatchStats<S>)> {
        let (n, c, h, w) = self.nchw(x)?;
        let m = n * h * w;
        if m == 0 {
            return Err(Error::Shape(
                "batch_norm: zero-size batch in training mode".into(),
            ));
        }
        check_affine_shapes(self.shape(gamma), self.shape(beta), c)?;
        let hw = h * w;
        let inv_m = S::from_f64(1.0 / m as f64);
        let epsv = S::from_f64(eps);

        let mut mean = vec![S::ZERO; c];
        let mut var = vec![S::ZERO; c];
        {
            let xd = self.data(x);
            for ch in 0..c {
                let mut acc = S::ZERO;
                for img in 0..n {
                    for v in &xd[(img * c + ch) * hw..][..hw] {
                        acc += *v;
                    }
                }
                mean[ch] = acc * inv_m;
            }
            for ch in 0..c {
                let mu = mean[ch];
                let mut acc = S::ZERO;
                for img in 0..n {
                    for v in &xd[(img * c + ch) * hw..][..hw] {
                        let d = *v - mu;
                        acc += d * d;
                    }
                }
                var[ch] = acc * inv_m;
            }
        }
        let inv_std: Vec<S> = var.iter().map(|v| S::ONE / (*v + epsv).sqrt()).collect();

        let mut data = vec![S::ZERO; n * c * hw];
        {
            let xd = self.data(x);
            let gd = self.data(gamma);
            let bd = self.data(beta);
            for img in 0..n {
                for ch in 0..c {
                    let (mu, is, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                    let src = &xd[(img * c + ch) * hw..][..hw];
                    let dst = &mut data[(img * c + ch) * hw..][..hw];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = ga * (*v - mu) * is + be;
                    }
                }
            }
        }

        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count: m,
        };
        let rq = self.any_requires(&[x, gamma, beta]);
        let id = self.finish(
            "batch_norm",
            data,
            vec![n, c, h, w],
            rq,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
        )?;
        Ok((id, stats))
    }

    /// Inference-mode batch normalization using fixed running statistics:
    /// `y = gamma · (x − mean)/sqrt(var + eps) + beta`.
    pub fn batch_norm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(x)?;
        check_affine_shapes(self.shape(gamma), self.shape(beta), c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm: running stats length {}/{} != channels {c}",
                running_mean.len(),
                running_var.len()
            )));
        }
        let epsv = S::from_f64(eps);
        let inv_std: Vec<S> = running_var
            .iter()
            .map(|v| S::ONE / (*v + epsv).sqrt())
            .collect();
        let hw = h * w;
        let mut data = vec![S::ZERO; n * c * hw];
        {
            let xd = self.data(x);
            let gd = self.data(gamma);
            let bd = self.data(beta);
            for img in 0..n {
                for ch in 0..c {
                    let (mu, is, ga, be) = (running_mean[ch], inv_std[ch], gd[ch], bd[ch]);
                    let src = &xd[(img * c + ch) * hw..][..hw];
                    let dst = &mut data[(img * c + ch) * hw..][..hw];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = ga * (*v - mu) * is + be;
                    }
                }
            }
        }
        let rq = self.any_requires(&[x, gamma, beta]);
        self.finish(
            "batch_norm",
            data,
            vec![n, c, h, w],
            rq,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
            },
        )
    }
}

pub(crate) fn backward<S: Scalar>(
    graph: &mut Graph<S>,
    out: usize,
    g: &[S],
    op: &Op<S>,
) -> Result<()> {
    match op {
        Op::BatchNormTrain {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let (n, c, h, w) = graph.nchw(*x)?;
            let hw = h * w;
            let m = n * hw;
            let inv_m = S::from_f64(1.0 / m as f64);
            let _ = out;

            // Per-channel reductions of g and g·x̂.
            let mut sum_g = vec![S::ZERO; c];
            let mut sum_gx = vec![S::ZERO; c];
            {
                let xd = graph.data(*x);
                for img in 0..n {
                    for ch in 0..c {
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let src = &xd[(img * c + ch) * hw..][..hw];
                        let gs = &g[(img * c + ch) * hw..][..hw];
                        for (xv, gv) in src.iter().zip(gs) {
                            sum_g[ch] += *gv;
                            sum_gx[ch] += *gv * (*xv - mu) * is;
                        }
                    }
                }
            }

            if graph.requires(*x) {
                let gd = graph.data(*gamma).to_vec();
                let xd = graph.data(*x);
                let mut dx = vec![S::ZERO; n * c * hw];
                for img in 0..n {
                    for ch in 0..c {
                        let (mu, is, ga) = (mean[ch], inv_std[ch], gd[ch]);
                        let mean_g = sum_g[ch] * inv_m;
                        let mean_gx = sum_gx[ch] * inv_m;
                        let src = &xd[(img * c + ch) * hw..][..hw];
                        let gs = &g[(img * c + ch) * hw..][..hw];
                        let dst = &mut dx[(img * c + ch) * hw..][..hw];
                        for ((d, xv), gv) in dst.iter_mut().zip(src).zip(gs) {
                            let xhat = (*xv - mu) * is;
                            *d = ga * is * (*gv - mean_g - xhat * mean_gx);
                        }
                    }
                }
                graph.accum(*x, &dx);
            }
            graph.accum(*gamma, &sum_gx);
            graph.accum(*beta, &sum_g);
        }
        Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let (n, c, h, w) = graph.nchw(*x)?;
            let hw = h * w;
            let mut sum_g = vec![S::ZERO; c];
            let mut sum_gx = vec![S::ZERO; c];
            {
                let xd = graph.data(*x);
                for img in 0..n {
                    for ch in 0..c {
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let src = &xd[(img * c + ch) * hw..][..hw];
                        let gs = &g[(img * c + ch) * hw..][..hw];
                        for (xv, gv) in src.iter().zip(gs) {
                            sum_g[ch] += *gv;
                            sum_gx[ch] += *gv * (*xv - mu) * is;
                        }
                    }
                }
            }
            if graph.requires(*x) {
                let gd = graph.data(*gamma).to_vec();
                let mut dx = vec![S::ZERO; n * c * hw];
                for img in 0..n {
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        let gs = &g[(img * c + ch) * hw..][..hw];
                        let dst = &mut dx[(img * c + ch) * hw..][..hw];
                        for (d, gv) in dst.iter_mut().zip(gs) {
                            *d = *gv * scale;
                        }
                    }
                }
                graph.accum(*x, &dx);
            }
            graph.accum(*gamma, &sum_gx);
            graph.accum(*beta, &sum_g);
        }
        _ => unreachable!("norm backward dispatched with non-norm op"),
    }
    Ok(())
}

fn check_affine_shapes(gs: &[usize], bs: &[usize], c: usize) -> Result<()> {
    if gs != [c] || bs != [c] {
        return Err(Error::Shape(format!(
            "batch_norm: gamma {gs:?} / beta {bs:?} must both be [{c}]"
        )));
    }
    Ok(())
}
