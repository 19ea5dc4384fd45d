//! Pixel-level evaluation: confusion accumulation, the overlap metrics
//! derived from it, whole-dataset and cross-region protocols, model
//! complexity accounting and Grad-CAM heatmaps.

mod gradcam;
mod xregion;

pub use gradcam::{grad_cam, CamHeatmap};
pub use xregion::{cross_region_eval, CrossRegionRow};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{predict_scalar, ForwardOpts, McdNet, ParamStore};
use crate::tensor::{Graph, Tensor};

/// Per-class TP/FP/FN/TN accumulators for the binary task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union() > 0).then(|| self.tp as f64 / self.union() as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Zero-denominator ratios are defined as 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion accumulator over both classes (0 background, 1 moraine).
/// Merging is associative and commutative, so any batching of a dataset
/// produces identical totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; 2],
}

impl ConfusionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "confusion: prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        for (p, g) in pred.iter().zip(gt) {
            if *p > 1 || *g > 1 {
                return Err(Error::Data(format!(
                    "confusion: labels must be 0/1, got {p}/{g}"
                )));
            }
            for (c, counts) in self.classes.iter_mut().enumerate() {
                let pp = usize::from(*p) == c;
                let gp = usize::from(*g) == c;
                match (pp, gp) {
                    (true, true) => counts.tp += 1,
                    (true, false) => counts.fp += 1,
                    (false, true) => counts.fn_ += 1,
                    (false, false) => counts.tn += 1,
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (mine, theirs) in self.classes.iter_mut().zip(&other.classes) {
            mine.tp += theirs.tp;
            mine.fp += theirs.fp;
            mine.fn_ += theirs.fn_;
            mine.tn += theirs.tn;
        }
    }

    pub fn total_pixels(&self) -> u64 {
        self.classes[0].total()
    }

    /// Mean IoU over classes with nonzero union.
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = self.classes.iter().filter_map(|c| c.iou()).collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }

    /// Class-averaged recall / precision / F1 (the cross-region table's macro
    /// figures, as opposed to the moraine-class values of MetricsReport).
    pub fn macro_metrics(&self) -> MacroMetrics {
        let mean = |f: fn(&ClassCounts) -> f64| {
            self.classes.iter().map(f).sum::<f64>() / self.classes.len() as f64
        };
        MacroMetrics {
            mrecall: mean(ClassCounts::recall),
            mprecision: mean(ClassCounts::precision),
            mf1: mean(ClassCounts::dice),
        }
    }
}

/// Class-averaged auxiliary metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroMetrics {
    pub mrecall: f64,
    pub mprecision: f64,
    pub mf1: f64,
}

/// Pixel-level metric bundle. Precision, recall and dice refer to the
/// moraine class; `iou` carries both classes (None when a class has zero
/// union and is excluded from the mean).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub iou: [Option<f64>; 2],
    pub miou: f64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub pixel_accuracy: f64,
}

/// Apply the metric definitions to accumulated counts.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<MetricsReport> {
    if counts.total_pixels() == 0 {
        return Err(Error::Data("compute_metrics: no pixels accumulated".into()));
    }
    let m = &counts.classes[1];
    let pa = ratio(m.tp + m.tn, m.total());
    Ok(MetricsReport {
        iou: [counts.classes[0].iou(), counts.classes[1].iou()],
        miou: counts.miou(),
        dice: m.dice(),
        precision: m.precision(),
        recall: m.recall(),
        pixel_accuracy: pa,
    })
}

/// Evaluate arbitrary per-sample predictions against ground truth with one
/// global confusion accumulation. This is the oracle-friendly core that
/// `evaluate` wires the model into.
pub fn evaluate_predictions<F>(samples: &[Sample], mut predict_fn: F) -> Result<MetricsReport>
where
    F: FnMut(&Sample) -> Result<Vec<u8>>,
{
    if samples.is_empty() {
        return Err(Error::Data("evaluate: empty dataset".into()));
    }
    let mut counts = ConfusionCounts::new();
    for sample in samples {
        let pred = predict_fn(sample)?;
        counts.accumulate(&pred, &sample.mask)?;
    }
    compute_metrics(&counts)
}

/// Run the model (inference mode, no augmentation) over a dataset and
/// compute metrics from one global confusion accumulation.
pub fn evaluate(
    model: &McdNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
) -> Result<MetricsReport> {
    evaluate_batched(model, store, samples, 1)
}

/// Same as [`evaluate`] but forwarding `batch_size` samples per graph.
/// Inference-mode normalization makes the report independent of batching.
pub fn evaluate_batched(
    model: &McdNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluate: empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config(
            "evaluate: batch_size must be positive".into(),
        ));
    }
    let mut counts = ConfusionCounts::new();
    for chunk in samples.chunks(batch_size) {
        let (h, w) = (chunk[0].height(), chunk[0].width());
        for s in chunk {
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "evaluate: sample {} is {}x{}, batch expects {h}x{w}",
                    s.id,
                    s.height(),
                    s.width()
                )));
            }
        }
        let mut data = Vec::with_capacity(chunk.len() * 3 * h * w);
        for s in chunk {
            data.extend_from_slice(s.image.data());
        }
        let batch = Tensor::new(&[chunk.len(), 3, h, w], data)?;
        let mut graph = Graph::new();
        let input = graph.leaf_tensor(&batch, false);
        let pass = model.forward(&mut graph, store, input, ForwardOpts::inference())?;
        let masks = predict_scalar(graph.data(pass.logits), graph.shape(pass.logits))?;
        for (i, s) in chunk.iter().enumerate() {
            counts.accumulate(&masks[i * h * w..(i + 1) * h * w], &s.mask)?;
        }
    }
    compute_metrics(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn perfect_and_inverted_predictions() {
        let gt = vec![0, 1, 1, 0, 1, 0, 0, 0];
        let mut counts = ConfusionCounts::new();
        counts.accumulate(&gt, &gt).unwrap();
        for c in &counts.classes {
            assert_eq!((c.fp, c.fn_), (0, 0));
        }
        let report = compute_metrics(&counts).unwrap();
        assert_eq!(report.miou, 1.0);
        assert_eq!(report.dice, 1.0);
        assert_eq!(report.pixel_accuracy, 1.0);

        let flipped: Vec<u8> = gt.iter().map(|v| 1 - v).collect();
        let mut counts = ConfusionCounts::new();
        counts.accumulate(&flipped, &gt).unwrap();
        for c in &counts.classes {
            assert_eq!(
                (c.tp, c.tn),
                (0, 0),
                "total disagreement has no correct pixels"
            );
        }
    }

    #[test]
    fn worked_example_from_direct_arithmetic() {
        // Moraine: tp=50 fp=25 fn=25 tn=900.
        let counts = ConfusionCounts {
            classes: [
                ClassCounts {
                    tp: 900,
                    fp: 25,
                    fn_: 25,
                    tn: 50,
                },
                ClassCounts {
                    tp: 50,
                    fp: 25,
                    fn_: 25,
                    tn: 900,
                },
            ],
        };
        let r = compute_metrics(&counts).unwrap();
        assert!((r.iou[1].unwrap() - 0.5).abs() < 1e-12);
        assert!((r.dice - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.pixel_accuracy - 0.95).abs() < 1e-12);
        assert!((r.iou[0].unwrap() - 900.0 / 950.0).abs() < 1e-12);
        let miou = (0.5 + 900.0 / 950.0) / 2.0;
        assert!((r.miou - miou).abs() < 1e-12);
        assert!((miou - 0.7237).abs() < 1e-4);
    }

    #[test]
    fn random_pairs_match_loop_oracle_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        for _ in 0..100 {
            let pred: Vec<u8> = (0..256).map(|_| rng.gen_range(0..=1u8)).collect();
            let gt: Vec<u8> = (0..256).map(|_| rng.gen_range(0..=1u8)).collect();
            let mut counts = ConfusionCounts::new();
            counts.accumulate(&pred, &gt).unwrap();
            let (tp, fp, fng, tn) = oracle::confusion(&pred, &gt);
            let m = &counts.classes[1];
            assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fng, tn));
            // Binary symmetry: background counts mirror moraine counts.
            let b = &counts.classes[0];
            assert_eq!((b.tp, b.fp, b.fn_, b.tn), (tn, fng, fp, tp));
        }
    }

    #[test]
    fn dice_iou_identity_on_randomized_counts() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..200 {
            let c = ClassCounts {
                tp: rng.gen_range(1..10_000),
                fp: rng.gen_range(0..10_000),
                fn_: rng.gen_range(0..10_000),
                tn: rng.gen_range(0..10_000),
            };
            let iou = c.iou().unwrap();
            let dice = c.dice();
            assert!(
                (dice - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12,
                "dice {dice} vs identity {}",
                2.0 * iou / (1.0 + iou)
            );
        }
    }

    #[test]
    fn merging_is_order_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let chunks: Vec<(Vec<u8>, Vec<u8>)> = (0..6)
            .map(|_| {
                (
                    (0..64).map(|_| rng.gen_range(0..=1u8)).collect(),
                    (0..64).map(|_| rng.gen_range(0..=1u8)).collect(),
                )
            })
            .collect();
        let mut forward = ConfusionCounts::new();
        for (p, g) in &chunks {
            forward.accumulate(p, g).unwrap();
        }
        let mut merged = ConfusionCounts::new();
        for (p, g) in chunks.iter().rev() {
            let mut part = ConfusionCounts::new();
            part.accumulate(p, g).unwrap();
            merged.merge(&part);
        }
        assert_eq!(forward, merged);
    }

    #[test]
    fn oracle_and_constant_predictors() {
        use crate::data::{generate_synthetic, SynthConfig};
        let samples = generate_synthetic(&SynthConfig {
            n: 4,
            size: 32,
            fraction_range: (0.1, 0.3),
            seed: 50,
        })
        .unwrap();
        // A predictor that returns ground truth scores perfectly.
        let report = evaluate_predictions(&samples, |s| Ok(s.mask.clone())).unwrap();
        assert_eq!(report.miou, 1.0);
        // All-background predictor: zero recall, accuracy = bg proportion.
        let report = evaluate_predictions(&samples, |s| Ok(vec![0; s.mask.len()])).unwrap();
        assert_eq!(report.recall, 0.0);
        let stats = crate::data::compute_stats(&samples, 10).unwrap();
        assert!((report.pixel_accuracy - stats.proportions.0).abs() < 1e-12);
        assert!(
            report.iou[1].is_some(),
            "moraine union nonzero via fn counts"
        );
    }

    #[test]
    fn batched_and_per_sample_evaluation_agree() {
        use crate::data::{generate_synthetic, SynthConfig};
        use crate::model::{McdNet, ModelConfig};
        let samples = generate_synthetic(&SynthConfig {
            n: 5,
            size: 32,
            fraction_range: (0.1, 0.3),
            seed: 51,
        })
        .unwrap();
        let model = McdNet::build(ModelConfig {
            channel_scale: 0.25,
            cbam_reduction: 4,
            ..Default::default()
        })
        .unwrap();
        let store = model.init_params(52).unwrap();
        let single = evaluate(&model, &store, &samples).unwrap();
        for batch in [2, 3, 5] {
            let batched = evaluate_batched(&model, &store, &samples, batch).unwrap();
            assert_eq!(single, batched, "batch size {batch} changed the report");
        }
    }

    #[test]
    fn zero_union_class_is_excluded_from_miou() {
        // No moraine anywhere: class 1 has zero union, so mIoU is the
        // background IoU alone.
        let mut counts = ConfusionCounts::new();
        counts.accumulate(&[0, 0, 0, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(counts.classes[1].union(), 0);
        assert_eq!(counts.miou(), 1.0);
        let r = compute_metrics(&counts).unwrap();
        assert_eq!(r.iou[1], None);
        assert_eq!(r.precision, 0.0, "zero-denominator precision defined as 0");
    }

    #[test]
    fn mismatched_or_invalid_labels_are_rejected() {
        let mut counts = ConfusionCounts::new();
        assert!(counts.accumulate(&[0, 1], &[0]).is_err());
        assert!(counts.accumulate(&[2], &[0]).is_err());
    }
}
