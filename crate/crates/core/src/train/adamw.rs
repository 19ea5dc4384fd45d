use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

/// Decoupled-weight-decay Adam. Moments are kept per parameter name; the
/// step counter is shared and increments once per `step` call.
pub struct AdamW<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    slots: HashMap<String, Moments<S>>,
}

struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update over the given (name, gradient) pairs.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        grads: &[(String, Vec<S>)],
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        for (name, grad) in grads {
            let param = store
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("optimizer: unknown parameter '{name}'")))?;
            if param.numel() != grad.len() {
                return Err(Error::Shape(format!(
                    "optimizer: gradient for '{name}' has {} values, parameter {}",
                    grad.len(),
                    param.numel()
                )));
            }
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![S::ZERO; grad.len()],
                v: vec![S::ZERO; grad.len()],
            });
            adamw_update(
                param.data_mut(),
                grad,
                &mut slot.m,
                &mut slot.v,
                self.t,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            );
        }
        Ok(())
    }
}

/// The update rule on raw slices:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g²`, bias-corrected m̂/v̂,
/// `θ <- θ − lr·m̂/(√v̂+ε) − lr·wd·θ` (both terms from the old θ).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    let b1 = S::from_f64(beta1);
    let b2 = S::from_f64(beta2);
    let lr_s = S::from_f64(lr);
    let eps_s = S::from_f64(eps);
    let wd = S::from_f64(weight_decay);
    let corr1 = S::from_f64(1.0 - beta1.powi(t as i32));
    let corr2 = S::from_f64(1.0 - beta2.powi(t as i32));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (S::ONE - b1) * g;
        v[i] = b2 * v[i] + (S::ONE - b2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        let theta = param[i];
        param[i] = theta - lr_s * m_hat / (v_hat.sqrt() + eps_s) - lr_s * wd * theta;
    }
}
