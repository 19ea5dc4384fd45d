use crate::error::{Error, Result};

/// Cosine annealing: `lr = lr_min + (lr0 − lr_min)·(1 + cos(π·epoch/T))/2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::Config(
            "cosine_lr: total epoch count must be positive".into(),
        ));
    }
    if epoch > total_epochs {
        return Err(Error::Config(format!(
            "cosine_lr: epoch {epoch} beyond horizon {total_epochs}"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}
