//! The MCD-Net model: MobileNetV2 backbone, optional CBAM refinement,
//! ASPP context module and DeepLabV3+ decoder, assembled over the tensor
//! engine with a named-parameter registry.

mod aspp;
mod backbone;
pub mod cbam;
mod decoder;
pub mod layers;
mod params;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub use layers::{MacItem, MacKind};
pub use params::{ParamEntry, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Scalar, TensorId};

use aspp::Aspp;
use backbone::Backbone;
use cbam::Cbam;
use decoder::Decoder;
use layers::BN_MOMENTUM;

/// Backbone selector. Only MobileNetV2 is implemented; deeper encoders
/// are out of scope for this baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    MobileNetV2,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// MobileNetV2 width multiplier.
    pub width: f64,
    pub use_cbam: bool,
    pub num_classes: usize,
    pub output_stride: usize,
    pub aspp_rates: (usize, usize, usize),
    pub aspp_channels: usize,
    pub decoder_lowlevel_channels: usize,
    /// Desk-scale shrink factor applied on top of `width` to every channel
    /// count; lets tests build tiny models without changing topology.
    pub channel_scale: f64,
    /// CBAM channel-attention reduction ratio.
    pub cbam_reduction: usize,
    /// CBAM spatial-attention kernel size (odd).
    pub cbam_spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::MobileNetV2,
            width: 1.0,
            use_cbam: true,
            num_classes: 2,
            output_stride: 16,
            aspp_rates: (6, 12, 18),
            aspp_channels: 256,
            decoder_lowlevel_channels: 48,
            channel_scale: 1.0,
            cbam_reduction: 16,
            cbam_spatial_kernel: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.output_stride == 8 || self.output_stride == 16) {
            return Err(Error::Config(format!(
                "output_stride must be 8 or 16, got {}",
                self.output_stride
            )));
        }
        let (r1, r2, r3) = self.aspp_rates;
        if r1 == 0 || r1 >= r2 || r2 >= r3 {
            return Err(Error::Config(format!(
                "aspp_rates must be strictly increasing and positive, got {:?}",
                self.aspp_rates
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.width <= 0.0 || self.channel_scale <= 0.0 {
            return Err(Error::Config(
                "width and channel_scale must be positive".into(),
            ));
        }
        if self.aspp_channels == 0 || self.decoder_lowlevel_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.cbam_reduction == 0 {
            return Err(Error::Config("cbam_reduction must be positive".into()));
        }
        if self.cbam_spatial_kernel.is_multiple_of(2) || self.cbam_spatial_kernel == 0 {
            return Err(Error::Config(format!(
                "cbam_spatial_kernel must be odd, got {}",
                self.cbam_spatial_kernel
            )));
        }
        Ok(())
    }

    /// Key=value snapshot (prefixed `model.`), the checkpoint provenance
    /// format. `from_snapshot` inverts it.
    pub fn to_snapshot(&self) -> String {
        let (r1, r2, r3) = self.aspp_rates;
        format!(
            "model.use_cbam={} model.width={} model.channel_scale={} model.num_classes={} model.output_stride={} model.aspp_rates={r1},{r2},{r3} model.aspp_channels={} model.decoder_lowlevel_channels={} model.cbam_reduction={} model.cbam_spatial_kernel={}",
            self.use_cbam,
            self.width,
            self.channel_scale,
            self.num_classes,
            self.output_stride,
            self.aspp_channels,
            self.decoder_lowlevel_channels,
            self.cbam_reduction,
            self.cbam_spatial_kernel,
        )
    }

    /// Rebuild a config from a snapshot line; keys outside the `model.`
    /// namespace are ignored so checkpoint lines parse directly.
    pub fn from_snapshot(line: &str) -> Result<ModelConfig> {
        let mut config = ModelConfig::default();
        for token in line.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                continue;
            };
            let Some(field) = key.strip_prefix("model.") else {
                continue;
            };
            let fail = || Error::Config(format!("bad snapshot value '{token}'"));
            match field {
                "use_cbam" => config.use_cbam = value.parse().map_err(|_| fail())?,
                "width" => config.width = value.parse().map_err(|_| fail())?,
                "channel_scale" => config.channel_scale = value.parse().map_err(|_| fail())?,
                "num_classes" => config.num_classes = value.parse().map_err(|_| fail())?,
                "output_stride" => config.output_stride = value.parse().map_err(|_| fail())?,
                "aspp_rates" => {
                    let parts: Vec<usize> = value
                        .split(',')
                        .map(|p| p.parse().map_err(|_| fail()))
                        .collect::<Result<_>>()?;
                    if parts.len() != 3 {
                        return Err(fail());
                    }
                    config.aspp_rates = (parts[0], parts[1], parts[2]);
                }
                "aspp_channels" => config.aspp_channels = value.parse().map_err(|_| fail())?,
                "decoder_lowlevel_channels" => {
                    config.decoder_lowlevel_channels = value.parse().map_err(|_| fail())?
                }
                "cbam_reduction" => config.cbam_reduction = value.parse().map_err(|_| fail())?,
                "cbam_spatial_kernel" => {
                    config.cbam_spatial_kernel = value.parse().map_err(|_| fail())?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown model snapshot key '{other}'"
                    )))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Channel width after the MobileNetV2 width multiplier (rounded to a
    /// multiple of 8 as usual) and the desk-scale shrink factor.
    pub(crate) fn scaled(&self, channels: usize) -> usize {
        let widened = make_divisible(channels as f64 * self.width, 8);
        ((widened as f64 * self.channel_scale).round() as usize).max(1)
    }

    /// Head (ASPP/decoder) widths take only the desk-scale factor; the
    /// width multiplier is a backbone notion.
    pub(crate) fn scaled_head(&self, channels: usize) -> usize {
        ((channels as f64 * self.channel_scale).round() as usize).max(1)
    }
}

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let new_v = ((v + d / 2.0) / d).floor() * d;
    let new_v = new_v.max(d);
    if new_v < 0.9 * v {
        (new_v + d) as usize
    } else {
        new_v as usize
    }
}

/// How a forward pass binds the graph: training mode switches batch-norm
/// statistics, `track_grads` decides whether parameters require gradients.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    pub train: bool,
    pub track_grads: bool,
    /// Skip the CBAM block even when the model owns one; used by the
    /// path-equivalence harness.
    pub bypass_cbam: bool,
}

impl ForwardOpts {
    pub fn training() -> Self {
        ForwardOpts {
            train: true,
            track_grads: true,
            bypass_cbam: false,
        }
    }

    pub fn inference() -> Self {
        ForwardOpts {
            train: false,
            track_grads: false,
            bypass_cbam: false,
        }
    }
}

/// Parameter-name to graph-leaf bindings of one pass, sorted by name.
pub type BoundParams = Vec<(String, TensorId)>;

/// Forward-pass workspace: binds named parameters into graph leaves once
/// each and collects batch-norm statistics for the trainer.
pub struct Session<'g, 's, S: Scalar> {
    pub graph: &'g mut Graph<S>,
    store: &'s ParamStore<S>,
    pub(crate) train: bool,
    track_grads: bool,
    bound: HashMap<String, TensorId>,
    bn_updates: Vec<(String, BatchStats<S>)>,
}

impl<'g, 's, S: Scalar> Session<'g, 's, S> {
    pub fn new(graph: &'g mut Graph<S>, store: &'s ParamStore<S>, opts: ForwardOpts) -> Self {
        Session {
            graph,
            store,
            train: opts.train,
            track_grads: opts.track_grads,
            bound: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Bind a named parameter as a graph leaf (once per pass).
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        if let Some(id) = self.bound.get(name) {
            return Ok(*id);
        }
        let entry = self
            .store
            .entry(name)
            .ok_or_else(|| Error::Config(format!("model parameter '{name}' not initialized")))?;
        let id = self
            .graph
            .leaf_tensor(&entry.tensor, entry.learnable && self.track_grads);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Pre-bind a parameter name to an existing graph leaf; used by
    /// verification harnesses that own the leaves.
    pub fn bind_existing(&mut self, name: &str, id: TensorId) {
        self.bound.insert(name.to_string(), id);
    }

    /// Raw values of a non-learnable buffer (running statistics).
    pub fn buffer(&self, name: &str) -> Result<Vec<S>> {
        Ok(self
            .store
            .entry(name)
            .ok_or_else(|| Error::Config(format!("model buffer '{name}' not initialized")))?
            .tensor
            .data()
            .to_vec())
    }

    pub(crate) fn record_bn(&mut self, layer: &str, stats: BatchStats<S>) {
        self.bn_updates.push((layer.to_string(), stats));
    }

    fn into_parts(self) -> (BoundParams, Vec<(String, BatchStats<S>)>) {
        let mut bound: Vec<(String, TensorId)> = self.bound.into_iter().collect();
        bound.sort_by(|a, b| a.0.cmp(&b.0));
        (bound, self.bn_updates)
    }
}

/// Feature taps of one forward pass, by the names Grad-CAM accepts.
pub struct ForwardPass<S: Scalar> {
    pub logits: TensorId,
    pub f_base: TensorId,
    pub f_att: TensorId,
    pub f_aspp: TensorId,
    pub f_low: TensorId,
    /// Parameter-name to graph-leaf bindings of this pass, sorted by name.
    pub bound_params: BoundParams,
    /// Fresh batch statistics per batch-norm layer (training mode only).
    pub bn_updates: Vec<(String, BatchStats<S>)>,
}

/// The assembled network.
pub struct McdNet {
    pub config: ModelConfig,
    backbone: Backbone,
    cbam: Option<Cbam>,
    aspp: Aspp,
    decoder: Decoder,
}

impl McdNet {
    pub fn build(config: ModelConfig) -> Result<McdNet> {
        config.validate()?;
        let backbone = Backbone::new(&config);
        let cbam = if config.use_cbam {
            Some(Cbam::new(
                "cbam",
                backbone.high_channels,
                config.cbam_reduction,
                config.cbam_spatial_kernel,
            )?)
        } else {
            None
        };
        let aspp = Aspp::new(&config, backbone.high_channels);
        let decoder = Decoder::new(&config, backbone.low_channels);
        Ok(McdNet {
            config,
            backbone,
            cbam,
            aspp,
            decoder,
        })
    }

    /// Initialize all parameters with a seeded generator. Two builds from
    /// the same seed produce bitwise-identical values.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, &mut rng)?;
        if let Some(cbam) = &self.cbam {
            cbam.init(&mut store, &mut rng)?;
        }
        self.aspp.init(&mut store, &mut rng)?;
        self.decoder.init(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Full forward pass `[N,3,H,W] -> logits [N,num_classes,H,W]`,
    /// exposing the intermediate feature taps.
    pub fn forward<S: Scalar>(
        &self,
        graph: &mut Graph<S>,
        store: &ParamStore<S>,
        input: TensorId,
        opts: ForwardOpts,
    ) -> Result<ForwardPass<S>> {
        let (n, c, h, w) = graph.nchw(input)?;
        let _ = (n, c);
        if h % self.config.output_stride != 0 || w % self.config.output_stride != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by output stride {}",
                self.config.output_stride
            )));
        }
        let mut sess = Session::new(graph, store, opts);
        let (f_base, f_low) = self.backbone.forward(&mut sess, input)?;
        let f_att = match (&self.cbam, opts.bypass_cbam) {
            (Some(cbam), false) => cbam.refine(&mut sess, f_base)?,
            _ => f_base,
        };
        let f_aspp = self.aspp.forward(&mut sess, f_att)?;
        let logits = self.decoder.forward(&mut sess, f_aspp, f_low, h, w)?;
        let (bound_params, bn_updates) = sess.into_parts();
        Ok(ForwardPass {
            logits,
            f_base,
            f_att,
            f_aspp,
            f_low,
            bound_params,
            bn_updates,
        })
    }

    /// Backbone stage only: `(F_base at stride os, F_low at stride 4)`.
    pub fn backbone_forward<S: Scalar>(
        &self,
        graph: &mut Graph<S>,
        store: &ParamStore<S>,
        input: TensorId,
        opts: ForwardOpts,
    ) -> Result<(TensorId, TensorId)> {
        let (_, _, h, w) = graph.nchw(input)?;
        if h % self.config.output_stride != 0 || w % self.config.output_stride != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by output stride {}",
                self.config.output_stride
            )));
        }
        let mut sess = Session::new(graph, store, opts);
        self.backbone.forward(&mut sess, input)
    }

    /// Fold collected batch statistics into the running buffers. The
    /// running variance keeps the same biased estimate normalization
    /// uses, so inference converges to the training-mode function on a
    /// fixed batch (an unbiased correction would leave small-extent
    /// layers, like the pooled ASPP branch, systematically mis-scaled).
    pub fn apply_bn_updates<S: Scalar>(
        store: &mut ParamStore<S>,
        updates: &[(String, BatchStats<S>)],
    ) -> Result<()> {
        for (layer, stats) in updates {
            store.update_running(&format!("{layer}.running_mean"), &stats.mean, BN_MOMENTUM)?;
            store.update_running(&format!("{layer}.running_var"), &stats.var, BN_MOMENTUM)?;
        }
        Ok(())
    }

    /// Learnable parameter count (running statistics excluded).
    pub fn count_params<S: Scalar>(&self, store: &ParamStore<S>) -> u64 {
        store.learnable_count()
    }

    /// Learnable parameter count of the CBAM submodule alone.
    pub fn cbam_param_count<S: Scalar>(&self, store: &ParamStore<S>) -> u64 {
        store
            .iter()
            .filter(|e| e.learnable && e.name.starts_with("cbam."))
            .map(|e| e.tensor.numel() as u64)
            .sum()
    }

    /// Per-layer multiply-accumulate breakdown at the given input size
    /// (batch 1). Convolutions count `H'·W'·Cout·(Cin/groups)·kh·kw`,
    /// linear layers `Dout·Din`, pooling and elementwise work one MAC per
    /// output element.
    pub fn count_macs(&self, h: usize, w: usize) -> Result<Vec<MacItem>> {
        if !h.is_multiple_of(self.config.output_stride)
            || !w.is_multiple_of(self.config.output_stride)
        {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by output stride {}",
                self.config.output_stride
            )));
        }
        let mut items = Vec::new();
        let (hh, hw, lh, lw) = self.backbone.macs(h, w, &mut items)?;
        if let Some(cbam) = &self.cbam {
            cbam.macs(hh, hw, &mut items)?;
        }
        self.aspp.macs(hh, hw, &mut items)?;
        self.decoder.macs(hh, hw, lh, lw, h, w, &mut items)?;
        Ok(items)
    }

    pub fn total_macs(&self, h: usize, w: usize) -> Result<u64> {
        Ok(self.count_macs(h, w)?.iter().map(|i| i.macs).sum())
    }
}

/// Per-pixel argmax over the class channel; ties resolve to class 0.
pub fn predict(logits: &[f64], shape: &[usize]) -> Result<Vec<u8>> {
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "predict expects NCHW logits, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut masks = vec![0u8; n * hw];
    for img in 0..n {
        for p in 0..hw {
            let mut best_class = 0usize;
            let mut best = logits[img * c * hw + p];
            for ch in 1..c {
                let v = logits[(img * c + ch) * hw + p];
                if v > best {
                    best = v;
                    best_class = ch;
                }
            }
            masks[img * hw + p] = best_class as u8;
        }
    }
    Ok(masks)
}

/// `predict` for any scalar type, via f64.
pub fn predict_scalar<S: Scalar>(logits: &[S], shape: &[usize]) -> Result<Vec<u8>> {
    let as_f64: Vec<f64> = logits.iter().map(|v| v.to_f64()).collect();
    predict(&as_f64, shape)
}
