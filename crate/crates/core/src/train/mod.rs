//! Optimization loop: weighted cross-entropy over the tensor engine,
//! AdamW with cosine annealing, per-epoch validation, early stopping and
//! best-checkpoint selection.

mod adamw;
mod checkpoint;
mod schedule;

pub use adamw::{adamw_update, AdamW};
pub use checkpoint::{Checkpoint, CheckpointTensor};
pub use schedule::cosine_lr;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::{augment, split_indices, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::eval::evaluate_batched;
use crate::model::{ForwardOpts, McdNet, ModelConfig, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, TensorId};

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub class_weights: (f64, f64),
    pub lr_min: f64,
    /// Fraction of the training set carved off (seeded) for validation;
    /// 0 validates on the training set itself.
    pub val_fraction: f64,
    pub seed: u64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Per-sample augmentation policy; None trains on raw tiles.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            max_epochs: 200,
            patience: 15,
            class_weights: (0.5, 0.5),
            lr_min: 0.0,
            val_fraction: 0.1,
            seed: 0,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.lr_min < 0.0 || self.lr_min > self.lr0 {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr0 and 0 <= lr_min <= lr0, got {} / {}",
                self.lr0, self.lr_min
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience must be in 1..=max_epochs, got {}",
                self.patience
            )));
        }
        if self.class_weights.0 < 0.0 || self.class_weights.1 < 0.0 {
            return Err(Error::Config("class weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0,1), got {}",
                self.val_fraction
            )));
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::Config(
                "weight_decay >= 0 and adam_eps > 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn best_val_miou(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.val_miou)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Schema: `epoch,loss,val_miou,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_miou,lr\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_miou, e.lr);
        }
        out
    }
}

/// The cross-entropy training objective on a forwarded batch: delegates
/// to the engine's weighted softmax cross-entropy.
pub fn loss<S: Scalar>(
    graph: &mut Graph<S>,
    logits: TensorId,
    masks: &[u8],
    class_weights: (f64, f64),
) -> Result<TensorId> {
    let targets: Vec<u32> = masks.iter().map(|m| *m as u32).collect();
    graph.softmax_ce(logits, &targets, &[class_weights.0, class_weights.1])
}

/// One-line provenance string stored in checkpoints; the `model.*` part
/// parses back via `ModelConfig::from_snapshot`.
pub fn config_snapshot(model: &ModelConfig, train: &TrainConfig) -> String {
    format!(
        "{} train.lr0={} train.weight_decay={} train.batch_size={} train.max_epochs={} train.patience={} train.class_weights={},{} train.lr_min={} train.val_fraction={} train.seed={}",
        model.to_snapshot(),
        train.lr0,
        train.weight_decay,
        train.batch_size,
        train.max_epochs,
        train.patience,
        train.class_weights.0,
        train.class_weights.1,
        train.lr_min,
        train.val_fraction,
        train.seed,
    )
}

/// Train with the real validation-mIoU evaluator.
pub fn train_loop(
    model: &McdNet,
    store: &mut ParamStore<f32>,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    let batch = config.batch_size;
    train_loop_with_evaluator(model, store, samples, config, move |m, s, val| {
        evaluate_batched(m, s, val, batch).map(|r| r.miou)
    })
}

/// Training loop with an injectable validation evaluator (the stopping
/// logic is tested against rigged evaluators).
///
/// Each epoch: seeded shuffle, optional augmentation, mini-batch forward/
/// backward, AdamW under the cosine schedule, then validation. Strict
/// improvement (> best + 1e-6) resets the patience counter and snapshots
/// the store; `patience` consecutive stagnant epochs stop the loop. The
/// returned checkpoint is the best one, not the last.
pub fn train_loop_with_evaluator<F>(
    model: &McdNet,
    store: &mut ParamStore<f32>,
    samples: &[Sample],
    config: &TrainConfig,
    mut evaluator: F,
) -> Result<(Checkpoint, TrainHistory)>
where
    F: FnMut(&McdNet, &ParamStore<f32>, &[Sample]) -> Result<f64>,
{
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("train_loop: empty training set".into()));
    }
    for s in samples {
        s.validate()?;
    }

    // Validation carve-out (seeded); fraction 0 validates on train.
    let (val_set, train_set): (Vec<Sample>, Vec<Sample>) = if config.val_fraction > 0.0 {
        let (val_idx, train_idx) = split_indices(
            samples.len(),
            config.val_fraction,
            mix(config.seed, 0x56414c),
        );
        if train_idx.is_empty() {
            return Err(Error::Data(
                "train_loop: validation split leaves no training data".into(),
            ));
        }
        let val = val_idx.iter().map(|i| samples[*i].clone()).collect();
        let train = train_idx.iter().map(|i| samples[*i].clone()).collect();
        (val, train)
    } else {
        (samples.to_vec(), samples.to_vec())
    };
    let val_set = if val_set.is_empty() {
        train_set.clone()
    } else {
        val_set
    };

    let mut optimizer: AdamW<f32> = AdamW::new(
        config.betas.0,
        config.betas.1,
        config.adam_eps,
        config.weight_decay,
    );
    let snapshot_line = config_snapshot(&model.config, config);

    let mut history = TrainHistory::default();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_ckpt: Option<Checkpoint> = None;
    let mut stagnant = 0usize;

    for epoch in 1..=config.max_epochs {
        let lr = cosine_lr(epoch - 1, config.max_epochs, config.lr0, config.lr_min)?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(mix(config.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0f64;
        let mut seen = 0usize;
        for (step, batch_idx) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(batch_idx.len());
            for &i in batch_idx {
                let sample = match &config.augment {
                    Some(aug) => augment(
                        &train_set[i],
                        aug,
                        mix(config.seed, ((epoch as u64) << 24) ^ i as u64),
                    )?,
                    None => train_set[i].clone(),
                };
                batch.push(sample);
            }
            let step_loss = train_step(model, store, &mut optimizer, &batch, config, lr).map_err(
                |e| match e {
                    Error::NonFinite { .. } => Error::Diverged { epoch, step },
                    other => other,
                },
            )?;
            if !step_loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            epoch_loss += step_loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        let train_loss = epoch_loss / seen as f64;

        let val_miou = evaluator(model, store, &val_set)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_miou,
            lr,
        });

        if val_miou > best_miou + 1e-6 {
            best_miou = val_miou;
            best_ckpt = Some(Checkpoint::from_store(
                store,
                epoch,
                val_miou,
                &snapshot_line,
            ));
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= config.patience {
                break;
            }
        }
    }

    let ckpt = best_ckpt.expect("at least one epoch ran and the first always improves");
    Ok((ckpt, history))
}

fn train_step(
    model: &McdNet,
    store: &mut ParamStore<f32>,
    optimizer: &mut AdamW<f32>,
    batch: &[Sample],
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let (h, w) = (batch[0].height(), batch[0].width());
    let mut data = Vec::with_capacity(batch.len() * 3 * h * w);
    let mut masks = Vec::with_capacity(batch.len() * h * w);
    for s in batch {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "train batch mixes sizes: {} is {}x{}, expected {h}x{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
        data.extend_from_slice(s.image.data());
        masks.extend_from_slice(&s.mask);
    }
    let input_tensor = Tensor::new(&[batch.len(), 3, h, w], data)?;

    let mut graph: Graph<f32> = Graph::new();
    let input = graph.leaf_tensor(&input_tensor, false);
    let pass = model.forward(&mut graph, store, input, ForwardOpts::training())?;
    let loss_id = loss(&mut graph, pass.logits, &masks, config.class_weights)?;
    let loss_value = graph.value(loss_id).to_f64();
    graph.backward(loss_id)?;

    let mut grads: Vec<(String, Vec<f32>)> = Vec::with_capacity(pass.bound_params.len());
    for (name, id) in &pass.bound_params {
        if let Some(g) = graph.grad(*id) {
            grads.push((name.clone(), g.to_vec()));
        }
    }
    optimizer.step(store, &grads, lr)?;
    McdNet::apply_bn_updates(store, &pass.bn_updates)?;
    Ok(loss_value)
}

/// Cheap seed mixing for derived generators.
pub(crate) fn mix(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::model::ModelConfig;

    fn tiny_setup(n: usize, size: usize) -> (McdNet, ParamStore<f32>, Vec<Sample>) {
        let model = McdNet::build(ModelConfig {
            channel_scale: 0.25,
            cbam_reduction: 4,
            ..Default::default()
        })
        .unwrap();
        let store = model.init_params(1).unwrap();
        let samples = generate_synthetic(&SynthConfig {
            n,
            size,
            fraction_range: (0.1, 0.3),
            seed: 2,
        })
        .unwrap();
        (model, store, samples)
    }

    fn quick_config(max_epochs: usize, patience: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            patience,
            batch_size: 4,
            val_fraction: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn rigged_decreasing_evaluator_stops_after_patience() {
        let (model, mut store, samples) = tiny_setup(4, 32);
        let config = quick_config(50, 2);
        let mut calls = 0;
        let (ckpt, history) =
            train_loop_with_evaluator(&model, &mut store, &samples, &config, |_, _, _| {
                calls += 1;
                Ok(1.0 - calls as f64 * 0.1)
            })
            .unwrap();
        // Epoch 1 improves (from -inf), epochs 2 and 3 stagnate -> stop.
        assert_eq!(history.epochs.len(), 3, "1 best + 2 stagnant epochs");
        assert_eq!(ckpt.epoch, 1, "best checkpoint is the first epoch");
        assert!((ckpt.best_val_miou - 0.9).abs() < 1e-12);
    }

    #[test]
    fn best_checkpoint_tracks_history_maximum() {
        let (model, mut store, samples) = tiny_setup(4, 32);
        let config = quick_config(6, 6);
        let rigged = [0.3, 0.7, 0.5, 0.9, 0.2, 0.1];
        let mut call = 0;
        let (ckpt, history) =
            train_loop_with_evaluator(&model, &mut store, &samples, &config, |_, _, _| {
                let v = rigged[call];
                call += 1;
                Ok(v)
            })
            .unwrap();
        assert_eq!(history.epochs.len(), 6);
        assert_eq!(ckpt.epoch, 4);
        assert!((ckpt.best_val_miou - history.best_val_miou()).abs() < 1e-12);
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let run = || {
            let (model, mut store, samples) = tiny_setup(4, 32);
            let config = quick_config(2, 2);
            let (_, history) = train_loop(&model, &mut store, &samples, &config).unwrap();
            history
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same seed must give identical histories");
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().starts_with("epoch,loss,val_miou,lr\n"));
    }

    #[test]
    fn lr_schedule_in_history_is_non_increasing() {
        let (model, mut store, samples) = tiny_setup(4, 32);
        let config = quick_config(5, 5);
        let (_, history) = train_loop(&model, &mut store, &samples, &config).unwrap();
        let lrs: Vec<f64> = history.epochs.iter().map(|e| e.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0] + 1e-18));
        assert!(lrs
            .iter()
            .all(|lr| *lr <= config.lr0 && *lr >= config.lr_min));
    }

    #[test]
    fn perfect_logits_give_negligible_loss() {
        // All-background mask with strongly background logits.
        let mut g: Graph<f32> = Graph::new();
        let mut logits = vec![0f32; 2 * 16];
        logits[..16].fill(25.0);
        let z = g.leaf(logits, &[1, 2, 4, 4], false).unwrap();
        let masks = vec![0u8; 16];
        let l = loss(&mut g, z, &masks, (0.5, 0.5)).unwrap();
        assert!(g.value(l) <= 1e-8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (model, mut store, samples) = tiny_setup(2, 32);
        for bad in [
            TrainConfig {
                patience: 0,
                ..quick_config(5, 1)
            },
            TrainConfig {
                patience: 9,
                ..quick_config(5, 1)
            },
            TrainConfig {
                lr0: 0.0,
                ..quick_config(5, 1)
            },
            TrainConfig {
                batch_size: 0,
                ..quick_config(5, 1)
            },
            TrainConfig {
                val_fraction: 1.0,
                ..quick_config(5, 1)
            },
        ] {
            assert!(train_loop(&model, &mut store, &samples, &bad).is_err());
        }
        assert!(train_loop(&model, &mut store, &[], &quick_config(5, 1)).is_err());
    }
}
