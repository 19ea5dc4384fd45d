use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::tensor::{Conv2dSpec, Scalar, Tensor, TensorId};

use super::params::{normal, ParamStore};
use super::Session;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Kind of arithmetic a layer contributes, for the complexity report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacKind {
    Conv,
    Linear,
    Elementwise,
    Pool,
}

impl MacKind {
    pub fn name(self) -> &'static str {
        match self {
            MacKind::Conv => "conv",
            MacKind::Linear => "linear",
            MacKind::Elementwise => "elementwise",
            MacKind::Pool => "pool",
        }
    }
}

/// One line of the per-layer complexity breakdown.
#[derive(Debug, Clone)]
pub struct MacItem {
    pub name: String,
    pub kind: MacKind,
    pub macs: u64,
}

pub(crate) fn conv_macs(
    name: &str,
    cout: usize,
    cin_per_group: usize,
    k: usize,
    oh: usize,
    ow: usize,
) -> MacItem {
    MacItem {
        name: name.to_string(),
        kind: MacKind::Conv,
        macs: (oh * ow * cout * cin_per_group * k * k) as u64,
    }
}

pub(crate) fn elementwise_macs(name: &str, elems: usize) -> MacItem {
    MacItem {
        name: name.to_string(),
        kind: MacKind::Elementwise,
        macs: elems as u64,
    }
}

/// Plain 2-D convolution layer owning a weight and optional bias.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
    pub bias: bool,
}

impl Conv2dLayer {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
    ) -> Self {
        Conv2dLayer {
            name: name.into(),
            cin,
            cout,
            kernel,
            spec,
            bias,
        }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Kaiming fan-out initialization, zero bias.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        let cin_g = self.cin / self.spec.groups;
        let fan_out = (self.cout * self.kernel * self.kernel) as f64;
        let std = (2.0 / fan_out).sqrt();
        let numel = self.cout * cin_g * self.kernel * self.kernel;
        let data: Vec<S> = (0..numel).map(|_| S::from_f64(normal(rng) * std)).collect();
        store.insert(
            &self.weight_name(),
            Tensor::new(&[self.cout, cin_g, self.kernel, self.kernel], data)?,
            true,
        )?;
        if self.bias {
            store.insert(&self.bias_name(), Tensor::zeros(&[self.cout]), true)?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = sess.param(&self.weight_name())?;
        let b = if self.bias {
            Some(sess.param(&self.bias_name())?)
        } else {
            None
        };
        sess.graph.conv2d(x, w, b, self.spec)
    }

    pub fn out_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.spec.out_extent(h, self.kernel)?,
            self.spec.out_extent(w, self.kernel)?,
        ))
    }

    pub fn macs(&self, h: usize, w: usize) -> Result<(Vec<MacItem>, usize, usize)> {
        let (oh, ow) = self.out_extent(h, w)?;
        let item = conv_macs(
            &self.name,
            self.cout,
            self.cin / self.spec.groups,
            self.kernel,
            oh,
            ow,
        );
        Ok((vec![item], oh, ow))
    }
}

/// Batch normalization layer: learnable affine plus running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            channels,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        store.insert(
            &format!("{}.gamma", self.name),
            Tensor::full(&[self.channels], S::ONE),
            true,
        )?;
        store.insert(
            &format!("{}.beta", self.name),
            Tensor::zeros(&[self.channels]),
            true,
        )?;
        store.insert(
            &format!("{}.running_mean", self.name),
            Tensor::zeros(&[self.channels]),
            false,
        )?;
        store.insert(
            &format!("{}.running_var", self.name),
            Tensor::full(&[self.channels], S::ONE),
            false,
        )?;
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        x: TensorId,
    ) -> Result<TensorId> {
        let gamma = sess.param(&format!("{}.gamma", self.name))?;
        let beta = sess.param(&format!("{}.beta", self.name))?;
        if sess.train {
            let (y, stats) = sess.graph.batch_norm_train(x, gamma, beta, BN_EPS)?;
            sess.record_bn(&self.name, stats);
            Ok(y)
        } else {
            let mean = sess.buffer(&format!("{}.running_mean", self.name))?;
            let var = sess.buffer(&format!("{}.running_var", self.name))?;
            sess.graph
                .batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPS)
        }
    }
}

/// Activation applied after a conv + norm pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Relu6,
}

/// Conv2d + BatchNorm2d + activation, bias-free conv as usual.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
    pub act: Act,
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        act: Act,
    ) -> Self {
        let spec = Conv2dSpec {
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups,
        };
        ConvBnAct {
            conv: Conv2dLayer::new(format!("{name}.conv"), cin, cout, kernel, spec, false),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout),
            act,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        self.conv.init(store, rng)?;
        self.bn.init(store)
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        x: TensorId,
    ) -> Result<TensorId> {
        let y = self.conv.forward(sess, x)?;
        let y = self.bn.forward(sess, y)?;
        match self.act {
            Act::None => Ok(y),
            Act::Relu => sess.graph.relu(y),
            Act::Relu6 => sess.graph.relu6(y),
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> Result<(Vec<MacItem>, usize, usize)> {
        let (mut items, oh, ow) = self.conv.macs(h, w)?;
        let elems = self.conv.cout * oh * ow;
        items.push(elementwise_macs(&self.bn.name, elems));
        if self.act != Act::None {
            items.push(elementwise_macs(&format!("{}.act", self.conv.name), elems));
        }
        Ok((items, oh, ow))
    }
}

/// Fully connected layer over the last dimension.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub name: String,
    pub din: usize,
    pub dout: usize,
    pub bias: bool,
}

impl LinearLayer {
    pub fn new(name: impl Into<String>, din: usize, dout: usize, bias: bool) -> Self {
        LinearLayer {
            name: name.into(),
            din,
            dout,
            bias,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        let std = (2.0 / self.din as f64).sqrt();
        let data: Vec<S> = (0..self.din * self.dout)
            .map(|_| S::from_f64(normal(rng) * std))
            .collect();
        store.insert(
            &format!("{}.weight", self.name),
            Tensor::new(&[self.dout, self.din], data)?,
            true,
        )?;
        if self.bias {
            store.insert(
                &format!("{}.bias", self.name),
                Tensor::zeros(&[self.dout]),
                true,
            )?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = sess.param(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(sess.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        sess.graph.linear(x, w, b)
    }

    pub fn mac_item(&self) -> MacItem {
        MacItem {
            name: self.name.clone(),
            kind: MacKind::Linear,
            macs: (self.din * self.dout) as u64,
        }
    }
}
