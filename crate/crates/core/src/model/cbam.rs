//! Convolutional Block Attention Module.
//!
//! Channel gate: `M_c = sigmoid(MLP(AvgPool(F)) + MLP(MaxPool(F)))` with a
//! shared two-layer MLP (C -> C/r -> C, ReLU between; no bias on the first
//! layer, bias on the second). Spatial gate: channel mean and max maps
//! stacked to two channels, convolved k x k (padding k/2, single output
//! channel, bias), then sigmoid. Applied sequentially:
//! `F' = M_c(F) . F`, `F_att = M_s(F') . F'`.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Scalar, TensorId};

use super::layers::{elementwise_macs, Conv2dLayer, LinearLayer, MacItem, MacKind};
use super::params::ParamStore;
use super::Session;

/// CBAM hyperparameters plus the owned layer descriptors.
pub struct Cbam {
    pub channels: usize,
    pub hidden: usize,
    pub spatial_kernel: usize,
    fc1: LinearLayer,
    fc2: LinearLayer,
    spatial: Conv2dLayer,
    name: String,
}

impl Cbam {
    pub fn new(
        name: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
    ) -> Result<Cbam> {
        if channels / reduction < 1 {
            return Err(Error::Config(format!(
                "cbam: channels {channels} / reduction {reduction} leaves no hidden width"
            )));
        }
        if spatial_kernel.is_multiple_of(2) {
            return Err(Error::Config("cbam: spatial kernel must be odd".into()));
        }
        let hidden = channels / reduction;
        let fc1 = LinearLayer::new(format!("{name}.mlp.fc1"), channels, hidden, false);
        let fc2 = LinearLayer::new(format!("{name}.mlp.fc2"), hidden, channels, true);
        let spatial = Conv2dLayer::new(
            format!("{name}.spatial.conv"),
            2,
            1,
            spatial_kernel,
            Conv2dSpec {
                padding: spatial_kernel / 2,
                ..Default::default()
            },
            true,
        );
        Ok(Cbam {
            channels,
            hidden,
            spatial_kernel,
            fc1,
            fc2,
            spatial,
            name: name.into(),
        })
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.fc2.init(store, rng)?;
        self.spatial.init(store, rng)
    }

    /// Shared MLP over a pooled `[N,C,1,1]` descriptor.
    fn mlp<S: Scalar>(&self, sess: &mut Session<'_, '_, S>, pooled: TensorId) -> Result<TensorId> {
        let n = sess.graph.shape(pooled)[0];
        let flat = sess.graph.reshape(pooled, &[n, self.channels])?;
        let mid = self.fc1.forward(sess, flat)?;
        let mid = sess.graph.relu(mid)?;
        self.fc2.forward(sess, mid)
    }

    /// Channel attention map `M_c [N,C,1,1]`, entries in (0,1).
    pub fn channel_attention<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        f: TensorId,
    ) -> Result<TensorId> {
        let (n, c, _, _) = sess.graph.nchw(f)?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "cbam: expected {} channels, got {c}",
                self.channels
            )));
        }
        let avg = sess.graph.global_avg_pool(f)?;
        let max = sess.graph.global_max_pool(f)?;
        let a = self.mlp(sess, avg)?;
        let b = self.mlp(sess, max)?;
        let sum = sess.graph.add(a, b)?;
        let gate = sess.graph.sigmoid(sum)?;
        sess.graph.reshape(gate, &[n, self.channels, 1, 1])
    }

    /// Spatial attention map `M_s [N,1,H,W]`, entries in (0,1).
    pub fn spatial_attention<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        f: TensorId,
    ) -> Result<TensorId> {
        let mean = sess.graph.channel_mean(f)?;
        let max = sess.graph.channel_max(f)?;
        let stacked = sess.graph.concat_channels(&[mean, max])?;
        let conv = self.spatial.forward(sess, stacked)?;
        sess.graph.sigmoid(conv)
    }

    /// Sequential refinement: channel gate first, spatial gate on the
    /// channel-refined map.
    pub fn refine<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        f: TensorId,
    ) -> Result<TensorId> {
        let mc = self.channel_attention(sess, f)?;
        let f_c = sess.graph.mul_bcast(f, mc)?;
        let ms = self.spatial_attention(sess, f_c)?;
        sess.graph.mul_bcast(f_c, ms)
    }

    pub fn macs(&self, h: usize, w: usize, items: &mut Vec<MacItem>) -> Result<()> {
        let c = self.channels;
        items.push(MacItem {
            name: format!("{}.channel.pools", self.name),
            kind: MacKind::Pool,
            macs: 2 * c as u64,
        });
        // The shared MLP runs on both pooled descriptors.
        for _ in 0..2 {
            items.push(self.fc1.mac_item());
            items.push(self.fc2.mac_item());
        }
        items.push(elementwise_macs(
            &format!("{}.channel.gate", self.name),
            c + c * h * w,
        ));
        items.push(MacItem {
            name: format!("{}.spatial.pools", self.name),
            kind: MacKind::Pool,
            macs: 2 * (h * w) as u64,
        });
        let (sub, _, _) = self.spatial.macs(h, w)?;
        items.extend(sub);
        items.push(elementwise_macs(
            &format!("{}.spatial.gate", self.name),
            h * w + c * h * w,
        ));
        Ok(())
    }
}
