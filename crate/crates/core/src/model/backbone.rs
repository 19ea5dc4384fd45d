use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::tensor::{Conv2dSpec, Scalar, TensorId};

use super::layers::{elementwise_macs, Act, BatchNorm2d, Conv2dLayer, ConvBnAct, MacItem};
use super::params::ParamStore;
use super::{ModelConfig, Session};

/// MobileNetV2 inverted-residual stage table: (expansion t, channels c,
/// repeats n, stride s).
const STAGES: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Index of the stage whose output is the stride-4 low-level tap.
const LOWLEVEL_STAGE: usize = 1;

/// Inverted residual block: pointwise expansion, depthwise 3x3, linear
/// pointwise projection, with a skip connection when shapes allow.
struct InvertedResidual {
    expand: Option<ConvBnAct>,
    depthwise: ConvBnAct,
    project_conv: Conv2dLayer,
    project_bn: BatchNorm2d,
    use_res: bool,
    name: String,
}

impl InvertedResidual {
    fn new(
        name: String,
        cin: usize,
        cout: usize,
        expansion: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let hidden = cin * expansion;
        let expand = (expansion != 1).then(|| {
            ConvBnAct::new(
                &format!("{name}.expand"),
                cin,
                hidden,
                1,
                1,
                1,
                1,
                Act::Relu6,
            )
        });
        let depthwise = ConvBnAct::new(
            &format!("{name}.depthwise"),
            hidden,
            hidden,
            3,
            stride,
            dilation,
            hidden,
            Act::Relu6,
        );
        let project_conv = Conv2dLayer::new(
            format!("{name}.project.conv"),
            hidden,
            cout,
            1,
            Conv2dSpec::default(),
            false,
        );
        let project_bn = BatchNorm2d::new(format!("{name}.project.bn"), cout);
        let use_res = stride == 1 && cin == cout;
        InvertedResidual {
            expand,
            depthwise,
            project_conv,
            project_bn,
            use_res,
            name,
        }
    }

    fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        if let Some(e) = &self.expand {
            e.init(store, rng)?;
        }
        self.depthwise.init(store, rng)?;
        self.project_conv.init(store, rng)?;
        self.project_bn.init(store)
    }

    fn forward<S: Scalar>(&self, sess: &mut Session<'_, '_, S>, x: TensorId) -> Result<TensorId> {
        let mut y = x;
        if let Some(e) = &self.expand {
            y = e.forward(sess, y)?;
        }
        y = self.depthwise.forward(sess, y)?;
        y = self.project_conv.forward(sess, y)?;
        y = self.project_bn.forward(sess, y)?;
        if self.use_res {
            y = sess.graph.add(x, y)?;
        }
        Ok(y)
    }

    fn macs(&self, h: usize, w: usize, items: &mut Vec<MacItem>) -> Result<(usize, usize)> {
        let (mut hh, mut ww) = (h, w);
        if let Some(e) = &self.expand {
            let (sub, nh, nw) = e.macs(hh, ww)?;
            items.extend(sub);
            (hh, ww) = (nh, nw);
        }
        let (sub, nh, nw) = self.depthwise.macs(hh, ww)?;
        items.extend(sub);
        (hh, ww) = (nh, nw);
        let (sub, nh, nw) = self.project_conv.macs(hh, ww)?;
        items.extend(sub);
        items.push(elementwise_macs(
            &self.project_bn.name,
            self.project_conv.cout * nh * nw,
        ));
        if self.use_res {
            items.push(elementwise_macs(
                &format!("{}.residual", self.name),
                self.project_conv.cout * nh * nw,
            ));
        }
        Ok((nh, nw))
    }
}

/// MobileNetV2 feature extractor truncated after the 320-channel stage.
/// Later stride-2 stages are converted to stride 1 with dilation so the
/// deepest features sit at `output_stride`, and the end of the stride-4
/// stage is exposed as the low-level decoder tap.
pub(super) struct Backbone {
    stem: ConvBnAct,
    blocks: Vec<InvertedResidual>,
    lowlevel_after: usize,
    pub high_channels: usize,
    pub low_channels: usize,
}

impl Backbone {
    pub fn new(config: &ModelConfig) -> Backbone {
        let stem_channels = config.scaled(32);
        let stem = ConvBnAct::new("backbone.stem", 3, stem_channels, 3, 2, 1, 1, Act::Relu6);

        let mut blocks = Vec::new();
        let mut cin = stem_channels;
        let mut acc_stride = 2usize;
        let mut rate = 1usize;
        let mut lowlevel_after = 0usize;
        let mut low_channels = 0usize;
        for (stage_idx, (t, c, n, s)) in STAGES.iter().enumerate() {
            let cout = config.scaled(*c);
            for i in 0..*n {
                let want_stride = if i == 0 { *s } else { 1 };
                let (stride, dilation) = if acc_stride >= config.output_stride {
                    if want_stride > 1 {
                        rate *= want_stride;
                    }
                    (1, rate)
                } else {
                    acc_stride *= want_stride;
                    (want_stride, 1)
                };
                let name = format!("backbone.block{}", blocks.len());
                blocks.push(InvertedResidual::new(name, cin, cout, *t, stride, dilation));
                cin = cout;
            }
            if stage_idx == LOWLEVEL_STAGE {
                lowlevel_after = blocks.len() - 1;
                low_channels = cout;
            }
        }

        Backbone {
            stem,
            blocks,
            lowlevel_after,
            high_channels: cin,
            low_channels,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        self.stem.init(store, rng)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        Ok(())
    }

    /// Returns `(F_base, F_low)`.
    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        input: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let mut y = self.stem.forward(sess, input)?;
        let mut low = None;
        for (i, block) in self.blocks.iter().enumerate() {
            y = block.forward(sess, y)?;
            if i == self.lowlevel_after {
                low = Some(y);
            }
        }
        Ok((y, low.expect("low-level tap inside block list")))
    }

    /// Accumulates per-layer MACs; returns high- and low-level tap dims.
    pub fn macs(
        &self,
        h: usize,
        w: usize,
        items: &mut Vec<MacItem>,
    ) -> Result<(usize, usize, usize, usize)> {
        let (sub, mut hh, mut ww) = self.stem.macs(h, w)?;
        items.extend(sub);
        let (mut lh, mut lw) = (0, 0);
        for (i, block) in self.blocks.iter().enumerate() {
            (hh, ww) = block.macs(hh, ww, items)?;
            if i == self.lowlevel_after {
                (lh, lw) = (hh, ww);
            }
        }
        Ok((hh, ww, lh, lw))
    }
}
