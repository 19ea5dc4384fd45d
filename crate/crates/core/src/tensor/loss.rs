use crate::error::{Error, Result};

use super::graph::{Graph, Op, TensorId};
use super::scalar::Scalar;

/// Floor applied to log-probabilities so saturated predictions cannot
/// produce −∞; gradients use the unclamped softmax formula.
const LOG_FLOOR: f64 = -30.0;

impl<S: Scalar> Graph<S> {
    /// Class-weighted softmax cross-entropy, averaged over all pixels.
    ///
    /// `logits [N,C,H,W]`, `targets` row-major `[N,H,W]` class indices,
    /// `class_weights [C]`. Softmax is stabilized by per-pixel max
    /// subtraction. Returns a scalar node.
    pub fn softmax_ce(
        &mut self,
        logits: TensorId,
        targets: &[u32],
        class_weights: &[f64],
    ) -> Result<TensorId> {
        let (n, c, h, w) = self.nchw(logits)?;
        let pixels = n * h * w;
        if targets.len() != pixels {
            return Err(Error::Shape(format!(
                "softmax_ce: {} targets for {pixels} pixels",
                targets.len()
            )));
        }
        if class_weights.len() != c {
            return Err(Error::Shape(format!(
                "softmax_ce: {} class weights for {c} classes",
                class_weights.len()
            )));
        }
        if class_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Shape(
                "softmax_ce: class weights must be non-negative".into(),
            ));
        }
        if let Some(bad) = targets.iter().find(|t| **t as usize >= c) {
            return Err(Error::Shape(format!(
                "softmax_ce: target class {bad} out of range [0, {c})"
            )));
        }
        let weights: Vec<S> = class_weights.iter().map(|w| S::from_f64(*w)).collect();
        let hw = h * w;
        let floor = S::from_f64(LOG_FLOOR);

        let mut probs = vec![S::ZERO; n * c * hw];
        let mut total = S::ZERO;
        {
            let zd = self.data(logits);
            for img in 0..n {
                for p in 0..hw {
                    let mut maxv = zd[img * c * hw + p];
                    for ch in 1..c {
                        let v = zd[(img * c + ch) * hw + p];
                        if v > maxv {
                            maxv = v;
                        }
                    }
                    let mut denom = S::ZERO;
                    for ch in 0..c {
                        let e = (zd[(img * c + ch) * hw + p] - maxv).exp();
                        probs[(img * c + ch) * hw + p] = e;
                        denom += e;
                    }
                    for ch in 0..c {
                        probs[(img * c + ch) * hw + p] /= denom;
                    }
                    let y = targets[img * hw + p] as usize;
                    let log_p = (zd[(img * c + y) * hw + p] - maxv - denom.ln()).maxv(floor);
                    total -= weights[y] * log_p;
                }
            }
        }
        let loss = total / S::from_f64(pixels as f64);
        let rq = self.requires(logits);
        self.finish(
            "softmax_ce",
            vec![loss],
            vec![1],
            rq,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
        )
    }
}

pub(crate) fn backward<S: Scalar>(
    graph: &mut Graph<S>,
    g: &[S],
    logits: TensorId,
    targets: &[u32],
    weights: &[S],
    probs: &[S],
) -> Result<()> {
    if !graph.requires(logits) {
        return Ok(());
    }
    let (n, c, h, w) = graph.nchw(logits)?;
    let hw = h * w;
    let pixels = n * hw;
    let scale = g[0] / S::from_f64(pixels as f64);
    let mut dz = vec![S::ZERO; n * c * hw];
    for img in 0..n {
        for p in 0..hw {
            let y = targets[img * hw + p] as usize;
            let wy = weights[y];
            for ch in 0..c {
                let idx = (img * c + ch) * hw + p;
                let indicator = if ch == y { S::ONE } else { S::ZERO };
                dz[idx] = scale * wy * (probs[idx] - indicator);
            }
        }
    }
    graph.accum(logits, &dz);
    Ok(())
}
