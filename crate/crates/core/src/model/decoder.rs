use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Scalar, TensorId};

use super::layers::{elementwise_macs, Act, Conv2dLayer, ConvBnAct, MacItem};
use super::params::ParamStore;
use super::{ModelConfig, Session};

/// DeepLabV3+ decoder: ASPP features upsampled x4, concatenated with the
/// projected low-level tap, refined by two 3x3 convolutions, classified
/// per pixel and upsampled to the input resolution.
pub(super) struct Decoder {
    lowlevel: ConvBnAct,
    refine1: ConvBnAct,
    refine2: ConvBnAct,
    classifier: Conv2dLayer,
}

impl Decoder {
    pub fn new(config: &ModelConfig, lowlevel_in: usize) -> Decoder {
        let aspp_ch = config.scaled_head(config.aspp_channels);
        let low_ch = config.scaled_head(config.decoder_lowlevel_channels);
        let lowlevel = ConvBnAct::new(
            "decoder.lowlevel",
            lowlevel_in,
            low_ch,
            1,
            1,
            1,
            1,
            Act::Relu,
        );
        let refine1 = ConvBnAct::new(
            "decoder.refine1",
            aspp_ch + low_ch,
            aspp_ch,
            3,
            1,
            1,
            1,
            Act::Relu,
        );
        let refine2 = ConvBnAct::new("decoder.refine2", aspp_ch, aspp_ch, 3, 1, 1, 1, Act::Relu);
        let classifier = Conv2dLayer::new(
            "decoder.classifier",
            aspp_ch,
            config.num_classes,
            1,
            Conv2dSpec::default(),
            true,
        );
        Decoder {
            lowlevel,
            refine1,
            refine2,
            classifier,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        self.lowlevel.init(store, rng)?;
        self.refine1.init(store, rng)?;
        self.refine2.init(store, rng)?;
        self.classifier.init(store, rng)
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        f_aspp: TensorId,
        f_low: TensorId,
        out_h: usize,
        out_w: usize,
    ) -> Result<TensorId> {
        let (_, _, lh, lw) = sess.graph.nchw(f_low)?;
        let (_, _, ah, aw) = sess.graph.nchw(f_aspp)?;
        if lh < ah || lw < aw {
            return Err(Error::Shape(format!(
                "decoder: low-level features {lh}x{lw} below ASPP {ah}x{aw}"
            )));
        }
        let up = sess.graph.upsample_bilinear(f_aspp, lh, lw)?;
        let low = self.lowlevel.forward(sess, f_low)?;
        let merged = sess.graph.concat_channels(&[up, low])?;
        let y = self.refine1.forward(sess, merged)?;
        let y = self.refine2.forward(sess, y)?;
        let logits = self.classifier.forward(sess, y)?;
        sess.graph.upsample_bilinear(logits, out_h, out_w)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn macs(
        &self,
        ah: usize,
        aw: usize,
        lh: usize,
        lw: usize,
        out_h: usize,
        out_w: usize,
        items: &mut Vec<MacItem>,
    ) -> Result<()> {
        let aspp_ch = self.refine2.conv.cout;
        items.push(elementwise_macs("decoder.upsample_aspp", aspp_ch * lh * lw));
        let _ = (ah, aw);
        let (sub, _, _) = self.lowlevel.macs(lh, lw)?;
        items.extend(sub);
        let (sub, _, _) = self.refine1.macs(lh, lw)?;
        items.extend(sub);
        let (sub, _, _) = self.refine2.macs(lh, lw)?;
        items.extend(sub);
        let (sub, _, _) = self.classifier.macs(lh, lw)?;
        items.extend(sub);
        items.push(elementwise_macs(
            "decoder.upsample_logits",
            self.classifier.cout * out_h * out_w,
        ));
        Ok(())
    }
}
