//! Python bindings: the model with its complexity accounting, the
//! synthetic data generator, dataset statistics, metric arithmetic and a
//! small training entry point, mirroring the CLI surface.

// The pymethods macro expands to identity PyErr conversions.
#![allow(clippy::useless_conversion)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcdnet::data::{compute_stats, generate_synthetic_to, load_dataset, random_split, SynthConfig};
use mcdnet::error::Error;
use mcdnet::eval::{compute_metrics, evaluate, grad_cam, ClassCounts, ConfusionCounts};
use mcdnet::model::{predict_scalar, ForwardOpts, McdNet, ModelConfig, ParamStore};
use mcdnet::tensor::{Graph, Tensor};
use mcdnet::train::{train_loop, Checkpoint, TrainConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn model_config_from_kwargs(
    use_cbam: bool,
    channel_scale: f64,
    width: f64,
    num_classes: usize,
    cbam_reduction: usize,
) -> ModelConfig {
    ModelConfig {
        use_cbam,
        channel_scale,
        width,
        num_classes,
        cbam_reduction,
        ..Default::default()
    }
}

/// MCD-Net model handle holding the architecture and its parameters.
#[pyclass]
struct Model {
    model: McdNet,
    store: ParamStore<f32>,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (use_cbam=true, channel_scale=1.0, width=1.0, num_classes=2, cbam_reduction=16, seed=0))]
    fn new(
        use_cbam: bool,
        channel_scale: f64,
        width: f64,
        num_classes: usize,
        cbam_reduction: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config =
            model_config_from_kwargs(use_cbam, channel_scale, width, num_classes, cbam_reduction);
        let model = McdNet::build(config).map_err(to_py_err)?;
        let store = model.init_params(seed).map_err(to_py_err)?;
        Ok(Model { model, store })
    }

    /// Load a model from a saved checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(to_py_err)?;
        let config = ModelConfig::from_snapshot(&ckpt.config_line).map_err(to_py_err)?;
        let model = McdNet::build(config).map_err(to_py_err)?;
        let mut store = model.init_params(0).map_err(to_py_err)?;
        ckpt.apply_to(&mut store).map_err(to_py_err)?;
        Ok(Model { model, store })
    }

    /// Learnable parameter count (running statistics excluded).
    fn param_count(&self) -> u64 {
        self.model.count_params(&self.store)
    }

    /// Learnable parameters of the attention block alone.
    fn cbam_param_count(&self) -> u64 {
        self.model.cbam_param_count(&self.store)
    }

    /// Total multiply-accumulates for one forward at the given size.
    fn macs(&self, height: usize, width: usize) -> PyResult<u64> {
        self.model.total_macs(height, width).map_err(to_py_err)
    }

    /// Forward one image given as a flat row-major [3,H,W] list in [0,1];
    /// returns the predicted flat H*W binary mask.
    fn predict(&self, image: Vec<f32>, height: usize, width: usize) -> PyResult<Vec<u8>> {
        if image.len() != 3 * height * width {
            return Err(PyValueError::new_err(format!(
                "image buffer {} != 3*{height}*{width}",
                image.len()
            )));
        }
        let batch = Tensor::new(&[1, 3, height, width], image).map_err(to_py_err)?;
        let mut graph: Graph<f32> = Graph::new();
        let input = graph.leaf_tensor(&batch, false);
        let pass = self
            .model
            .forward(&mut graph, &self.store, input, ForwardOpts::inference())
            .map_err(to_py_err)?;
        predict_scalar(graph.data(pass.logits), graph.shape(pass.logits)).map_err(to_py_err)
    }

    /// Grad-CAM heatmap (flat H*W values in [0,1]) for one image.
    #[pyo3(signature = (image, height, width, target_class=1, target_layer=None))]
    fn gradcam(
        &self,
        image: Vec<f32>,
        height: usize,
        width: usize,
        target_class: usize,
        target_layer: Option<&str>,
    ) -> PyResult<Vec<f64>> {
        let tensor = Tensor::new(&[3, height, width], image).map_err(to_py_err)?;
        let cam = grad_cam(
            &self.model,
            &self.store,
            &tensor,
            target_class,
            target_layer,
        )
        .map_err(to_py_err)?;
        Ok(cam.values)
    }

    /// Evaluate on a manifest; returns the metric dictionary.
    fn evaluate_manifest(&self, manifest: PathBuf) -> PyResult<HashMap<String, f64>> {
        let samples = load_dataset(&manifest).map_err(to_py_err)?;
        let report = evaluate(&self.model, &self.store, &samples).map_err(to_py_err)?;
        Ok(report_to_map(&report))
    }
}

fn report_to_map(report: &mcdnet::eval::MetricsReport) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    out.insert("miou".into(), report.miou);
    out.insert("dice".into(), report.dice);
    out.insert("precision".into(), report.precision);
    out.insert("recall".into(), report.recall);
    out.insert("pixel_accuracy".into(), report.pixel_accuracy);
    if let Some(iou) = report.iou[0] {
        out.insert("iou_background".into(), iou);
    }
    if let Some(iou) = report.iou[1] {
        out.insert("iou_moraine".into(), iou);
    }
    out
}

/// Cosine annealing learning rate.
#[pyfunction]
fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> PyResult<f64> {
    mcdnet::train::cosine_lr(epoch, total_epochs, lr0, lr_min).map_err(to_py_err)
}

/// Metrics from raw moraine-class confusion counts.
#[pyfunction(name = "metrics_from_counts")]
fn metrics_from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> PyResult<HashMap<String, f64>> {
    let counts = ConfusionCounts {
        classes: [
            ClassCounts {
                tp: tn,
                fp: fn_,
                fn_: fp,
                tn: tp,
            },
            ClassCounts { tp, fp, fn_, tn },
        ],
    };
    let report = compute_metrics(&counts).map_err(to_py_err)?;
    Ok(report_to_map(&report))
}

/// Generate a synthetic dataset with manifest; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, n=16, size=64, fraction_lo=0.1, fraction_hi=0.3, seed=0))]
fn generate_synthetic(
    out_dir: PathBuf,
    n: usize,
    size: usize,
    fraction_lo: f64,
    fraction_hi: f64,
    seed: u64,
) -> PyResult<String> {
    std::fs::create_dir_all(&out_dir).map_err(|e| to_py_err(Error::io(out_dir.clone(), e)))?;
    let config = SynthConfig {
        n,
        size,
        fraction_range: (fraction_lo, fraction_hi),
        seed,
    };
    let (_, manifest) = generate_synthetic_to(&out_dir, &config).map_err(to_py_err)?;
    Ok(manifest.display().to_string())
}

/// Class proportions and per-sample coverage for a manifest.
#[pyfunction]
fn dataset_stats(manifest: PathBuf) -> PyResult<HashMap<String, f64>> {
    let samples = load_dataset(&manifest).map_err(to_py_err)?;
    let stats = compute_stats(&samples, 20).map_err(to_py_err)?;
    let mut out = HashMap::new();
    out.insert("background".into(), stats.proportions.0);
    out.insert("moraine".into(), stats.proportions.1);
    out.insert("samples".into(), stats.per_sample_fraction.len() as f64);
    Ok(out)
}

/// Train a desk-scale model on a manifest (9:1 split applied first) and
/// save the best checkpoint; returns the history as dictionaries.
#[pyfunction]
#[pyo3(signature = (manifest, checkpoint, use_cbam=true, channel_scale=0.25, cbam_reduction=4, max_epochs=20, batch_size=8, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    manifest: PathBuf,
    checkpoint: PathBuf,
    use_cbam: bool,
    channel_scale: f64,
    cbam_reduction: usize,
    max_epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<Vec<HashMap<String, f64>>> {
    let samples = load_dataset(&manifest).map_err(to_py_err)?;
    let (train_set, _test) = random_split(samples, seed).map_err(to_py_err)?;
    let config = model_config_from_kwargs(use_cbam, channel_scale, 1.0, 2, cbam_reduction);
    let model = McdNet::build(config).map_err(to_py_err)?;
    let mut store: ParamStore<f32> = model.init_params(seed).map_err(to_py_err)?;
    let tc = TrainConfig {
        max_epochs,
        patience: max_epochs,
        batch_size,
        val_fraction: 0.0,
        seed,
        ..Default::default()
    };
    let (ckpt, history) = train_loop(&model, &mut store, &train_set, &tc).map_err(to_py_err)?;
    if let Some(dir) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| to_py_err(Error::io(dir, e)))?;
    }
    ckpt.save(&checkpoint).map_err(to_py_err)?;
    Ok(history
        .epochs
        .iter()
        .map(|e| {
            let mut row = HashMap::new();
            row.insert("epoch".to_string(), e.epoch as f64);
            row.insert("loss".to_string(), e.train_loss);
            row.insert("val_miou".to_string(), e.val_miou);
            row.insert("lr".to_string(), e.lr);
            row
        })
        .collect())
}

/// Load one RGB PNG as a flat [3,H,W] float list plus its size.
#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<(Vec<f32>, usize, usize)> {
    let (w, h, rgb) = mcdnet::png_io::read_rgb(Path::new(&path)).map_err(to_py_err)?;
    let mut data = vec![0f32; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + p] = rgb[p * 3 + ch] as f32 / 255.0;
        }
    }
    Ok((data, h, w))
}

#[pymodule]
fn mcdnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    Ok(())
}
