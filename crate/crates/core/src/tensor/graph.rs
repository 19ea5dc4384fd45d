use crate::error::{Error, Result};

use super::conv::Conv2dSpec;
use super::scalar::Scalar;
use super::{check_same_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct Node<S: Scalar> {
    pub data: Vec<S>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
    pub op: Op<S>,
}

/// Recorded operator application. Saved fields hold whatever the backward
/// rule needs beyond the input values themselves (argmax routes, softmax
/// probabilities, batch statistics).
pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    MulBcast {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        factor: S,
    },
    Relu {
        a: TensorId,
    },
    Relu6 {
        a: TensorId,
    },
    Sigmoid {
        a: TensorId,
    },
    Reshape {
        a: TensorId,
    },
    ConcatC {
        inputs: Vec<TensorId>,
    },
    SumAll {
        a: TensorId,
    },
    MeanAll {
        a: TensorId,
    },
    Linear {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv2dSpec,
    },
    GlobalAvgPool {
        a: TensorId,
    },
    GlobalMaxPool {
        a: TensorId,
        argmax: Vec<usize>,
    },
    ChannelMean {
        a: TensorId,
    },
    ChannelMax {
        a: TensorId,
        argmax: Vec<usize>,
    },
    AvgPool2d {
        a: TensorId,
        win: usize,
        stride: usize,
    },
    MaxPool2d {
        a: TensorId,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    BatchNormEval {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    UpsampleBilinear {
        a: TensorId,
    },
    SoftmaxCe {
        logits: TensorId,
        targets: Vec<u32>,
        weights: Vec<S>,
        probs: Vec<S>,
    },
}

/// Reverse-mode computation tape.
///
/// Operators append nodes; inputs always precede outputs, so a reverse
/// index sweep visits every node exactly once in valid topological order.
/// In checked mode every forward output is scanned for non-finite values
/// and an error is raised instead of silently propagating NaN.
pub struct Graph<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
    checked: bool,
    backward_done: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: true,
            backward_done: false,
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, data: Vec<S>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape.to_vec(), requires_grad, Op::Leaf))
    }

    pub fn leaf_tensor(&mut self, t: &Tensor<S>, requires_grad: bool) -> TensorId {
        self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    pub(crate) fn push(
        &mut self,
        data: Vec<S>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op<S>,
    ) -> TensorId {
        // Nodes that need no gradient keep no op: backward skips them.
        let op = if requires_grad { op } else { Op::Leaf };
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        id
    }

    pub(crate) fn finish(
        &mut self,
        op_name: &'static str,
        data: Vec<S>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op<S>,
    ) -> Result<TensorId> {
        if self.checked && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        Ok(self.push(data, shape, requires_grad, op))
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a one-element node.
    pub fn value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor<S> {
        Tensor::new(self.shape(id), self.data(id).to_vec()).expect("node shape is consistent")
    }

    pub(crate) fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub(crate) fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.requires(*id))
    }

    pub(crate) fn accum(&mut self, id: TensorId, contribution: &[S]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| vec![S::ZERO; node.data.len()]);
        debug_assert_eq!(grad.len(), contribution.len());
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += *c;
        }
    }

    pub(crate) fn nchw(&self, id: TensorId) -> Result<(usize, usize, usize, usize)> {
        let s = self.shape(id);
        if s.len() != 4 {
            return Err(Error::Shape(format!(
                "expected NCHW tensor, got shape {s:?}"
            )));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    // ── Elementwise and structural operators ───────────────────────────

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        check_same_shape("add", self.shape(a), self.shape(b))?;
        let data: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.any_requires(&[a, b]);
        self.finish("add", data, shape, rq, Op::Add { a, b })
    }

    /// Elementwise product `a * b` where `b` may broadcast: shapes have
    /// equal rank and every dim of `b` either matches `a` or equals 1.
    /// Covers the CBAM gates ([N,C,1,1] and [N,1,H,W] against [N,C,H,W]).
    pub fn mul_bcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || sa.iter().zip(&sb).any(|(da, db)| *db != 1 && *db != *da) {
            return Err(Error::Shape(format!(
                "mul_bcast: cannot broadcast {sb:?} over {sa:?}"
            )));
        }
        let map = BcastMap::new(&sa, &sb);
        let bd = self.data(b);
        let data: Vec<S> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| *x * bd[map.index(i)])
            .collect();
        let rq = self.any_requires(&[a, b]);
        self.finish("mul", data, sa, rq, Op::MulBcast { a, b })
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: TensorId, factor: S) -> Result<TensorId> {
        let data: Vec<S> = self.data(a).iter().map(|x| *x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rq = self.requires(a);
        self.finish("scale", data, shape, rq, Op::Scale { a, factor })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<S> = self
            .data(a)
            .iter()
            .map(|x| if *x > S::ZERO { *x } else { S::ZERO })
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.requires(a);
        self.finish("relu", data, shape, rq, Op::Relu { a })
    }

    /// ReLU clamped to [0, 6], the MobileNetV2 activation.
    pub fn relu6(&mut self, a: TensorId) -> Result<TensorId> {
        let six = S::from_f64(6.0);
        let data: Vec<S> = self
            .data(a)
            .iter()
            .map(|x| (*x).maxv(S::ZERO).minv(six))
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.requires(a);
        self.finish("relu6", data, shape, rq, Op::Relu6 { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<S> = self
            .data(a)
            .iter()
            .map(|x| S::ONE / (S::ONE + (-*x).exp()))
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.requires(a);
        self.finish("sigmoid", data, shape, rq, Op::Sigmoid { a })
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.numel(a) {
            return Err(Error::Shape(format!(
                "reshape: {} elements cannot take shape {:?}",
                self.numel(a),
                shape
            )));
        }
        let data = self.data(a).to_vec();
        let rq = self.requires(a);
        self.finish("reshape", data, shape.to_vec(), rq, Op::Reshape { a })
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat_channels: no inputs".into()));
        }
        let (n, _, h, w) = self.nchw(inputs[0])?;
        let mut c_total = 0;
        for &id in inputs {
            let (ni, ci, hi, wi) = self.nchw(id)?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels: incompatible shapes {:?} vs {:?}",
                    self.shape(inputs[0]),
                    self.shape(id)
                )));
            }
            c_total += ci;
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for img in 0..n {
            for &id in inputs {
                let ci = self.shape(id)[1];
                let plane = ci * h * w;
                let src = &self.data(id)[img * plane..(img + 1) * plane];
                data.extend_from_slice(src);
            }
        }
        let rq = self.any_requires(inputs);
        self.finish(
            "concat",
            data,
            vec![n, c_total, h, w],
            rq,
            Op::ConcatC {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Sum of all elements, producing a scalar node.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let mut acc = S::ZERO;
        for v in self.data(a) {
            acc += *v;
        }
        let rq = self.requires(a);
        self.finish("sum", vec![acc], vec![1], rq, Op::SumAll { a })
    }

    /// Mean of all elements, producing a scalar node.
    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.numel(a);
        if n == 0 {
            return Err(Error::Shape("mean_all: empty tensor".into()));
        }
        let mut acc = S::ZERO;
        for v in self.data(a) {
            acc += *v;
        }
        let rq = self.requires(a);
        self.finish(
            "mean",
            vec![acc / S::from_f64(n as f64)],
            vec![1],
            rq,
            Op::MeanAll { a },
        )
    }

    /// Affine map over the last dimension: `x [..., Din] -> [..., Dout]`
    /// with `w [Dout, Din]` and optional bias `[Dout]`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: Option<TensorId>) -> Result<TensorId> {
        let sw = self.shape(w);
        if sw.len() != 2 {
            return Err(Error::Shape(format!(
                "linear: weight must be 2-D, got {sw:?}"
            )));
        }
        let (dout, din) = (sw[0], sw[1]);
        let sx = self.shape(x).to_vec();
        if sx.last() != Some(&din) {
            return Err(Error::Shape(format!(
                "linear: input shape {sx:?} does not end in Din={din}"
            )));
        }
        if let Some(bid) = b {
            if self.shape(bid) != [dout] {
                return Err(Error::Shape(format!(
                    "linear: bias shape {:?} != [{dout}]",
                    self.shape(bid)
                )));
            }
        }
        let batch = self.numel(x) / din;
        let mut data = vec![S::ZERO; batch * dout];
        {
            let xd = self.data(x);
            let wd = self.data(w);
            for r in 0..batch {
                let xrow = &xd[r * din..(r + 1) * din];
                let out = &mut data[r * dout..(r + 1) * dout];
                for (o, out_v) in out.iter_mut().enumerate() {
                    let wrow = &wd[o * din..(o + 1) * din];
                    let mut acc = S::ZERO;
                    for (xv, wv) in xrow.iter().zip(wrow) {
                        acc += *xv * *wv;
                    }
                    *out_v = acc;
                }
            }
        }
        if let Some(bid) = b {
            let bd = self.data(bid).to_vec();
            for r in 0..batch {
                for o in 0..dout {
                    data[r * dout + o] += bd[o];
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = dout;
        let mut ids = vec![x, w];
        if let Some(bid) = b {
            ids.push(bid);
        }
        let rq = self.any_requires(&ids);
        self.finish("linear", data, shape, rq, Op::Linear { x, w, b })
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Zero every gradient buffer so the (retained) graph can be swept again.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar loss node. Populates `grad` on every
    /// node that requires a gradient; gradients accumulate additively.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this graph; call zero_grads() to retain and re-run".into(),
            ));
        }
        self.backward_done = true;
        if !self.requires(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![S::ONE]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            // Detach grad and op so input nodes can be borrowed freely.
            let g = self.nodes[i].grad.take().expect("grad checked above");
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_node(i, &g, &op)?;
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, out: usize, g: &[S], op: &Op<S>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accum(*a, g);
                self.accum(*b, g);
            }
            Op::MulBcast { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let map = BcastMap::new(&sa, &sb);
                if self.requires(*a) {
                    let bd = self.data(*b);
                    let da: Vec<S> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| *gv * bd[map.index(i)])
                        .collect();
                    self.accum(*a, &da);
                }
                if self.requires(*b) {
                    let ad = self.data(*a);
                    let mut db = vec![S::ZERO; self.numel(*b)];
                    for (i, gv) in g.iter().enumerate() {
                        db[map.index(i)] += *gv * ad[i];
                    }
                    self.accum(*b, &db);
                }
            }
            Op::Scale { a, factor } => {
                let da: Vec<S> = g.iter().map(|gv| *gv * *factor).collect();
                self.accum(*a, &da);
            }
            Op::Relu { a } => {
                let da: Vec<S> = {
                    let xd = self.data(*a);
                    g.iter()
                        .zip(xd)
                        .map(|(gv, x)| if *x > S::ZERO { *gv } else { S::ZERO })
                        .collect()
                };
                self.accum(*a, &da);
            }
            Op::Relu6 { a } => {
                let six = S::from_f64(6.0);
                let da: Vec<S> = {
                    let xd = self.data(*a);
                    g.iter()
                        .zip(xd)
                        .map(|(gv, x)| {
                            if *x > S::ZERO && *x < six {
                                *gv
                            } else {
                                S::ZERO
                            }
                        })
                        .collect()
                };
                self.accum(*a, &da);
            }
            Op::Sigmoid { a } => {
                let da: Vec<S> = {
                    let yd = &self.nodes[out].data;
                    g.iter()
                        .zip(yd)
                        .map(|(gv, y)| *gv * *y * (S::ONE - *y))
                        .collect()
                };
                self.accum(*a, &da);
            }
            Op::Reshape { a } => {
                self.accum(*a, g);
            }
            Op::ConcatC { inputs } => {
                let (n, c_total, h, w) = self.nchw(TensorId(out))?;
                let hw = h * w;
                for img in 0..n {
                    let mut c_off = 0;
                    for &id in inputs {
                        let ci = self.shape(id)[1];
                        if self.requires(id) {
                            let plane = ci * hw;
                            let src = &g[img * c_total * hw + c_off * hw..][..plane];
                            // Accumulate per image to keep slices contiguous.
                            let mut da = vec![S::ZERO; self.numel(id)];
                            da[img * plane..(img + 1) * plane].copy_from_slice(src);
                            self.accum(id, &da);
                        }
                        c_off += ci;
                    }
                }
            }
            Op::SumAll { a } => {
                let da = vec![g[0]; self.numel(*a)];
                self.accum(*a, &da);
            }
            Op::MeanAll { a } => {
                let n = self.numel(*a);
                let da = vec![g[0] / S::from_f64(n as f64); n];
                self.accum(*a, &da);
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (dout, din) = (sw[0], sw[1]);
                let batch = self.numel(*x) / din;
                if self.requires(*x) {
                    let wd = self.data(*w);
                    let mut dx = vec![S::ZERO; batch * din];
                    for r in 0..batch {
                        for o in 0..dout {
                            let gv = g[r * dout + o];
                            let wrow = &wd[o * din..(o + 1) * din];
                            let dxrow = &mut dx[r * din..(r + 1) * din];
                            for (dxv, wv) in dxrow.iter_mut().zip(wrow) {
                                *dxv += gv * *wv;
                            }
                        }
                    }
                    self.accum(*x, &dx);
                }
                if self.requires(*w) {
                    let xd = self.data(*x);
                    let mut dw = vec![S::ZERO; dout * din];
                    for r in 0..batch {
                        let xrow = &xd[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let gv = g[r * dout + o];
                            let dwrow = &mut dw[o * din..(o + 1) * din];
                            for (dwv, xv) in dwrow.iter_mut().zip(xrow) {
                                *dwv += gv * *xv;
                            }
                        }
                    }
                    self.accum(*w, &dw);
                }
                if let Some(bid) = b {
                    if self.requires(*bid) {
                        let mut db = vec![S::ZERO; dout];
                        for r in 0..batch {
                            for o in 0..dout {
                                db[o] += g[r * dout + o];
                            }
                        }
                        self.accum(*bid, &db);
                    }
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                super::conv::backward(self, out, g, *x, *w, *b, spec)?;
            }
            Op::GlobalAvgPool { a }
            | Op::GlobalMaxPool { a, .. }
            | Op::ChannelMean { a }
            | Op::ChannelMax { a, .. }
            | Op::AvgPool2d { a, .. }
            | Op::MaxPool2d { a, .. } => {
                super::pool::backward(self, out, g, *a, op)?;
            }
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => {
                super::norm::backward(self, out, g, op)?;
            }
            Op::UpsampleBilinear { a } => {
                super::interp::backward(self, out, g, *a)?;
            }
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
                probs,
            } => {
                super::loss::backward(self, g, *logits, targets, weights, probs)?;
            }
        }
        Ok(())
    }
}

/// Index translation for broadcasting `b` over `a`: dims where `b` has
/// extent 1 get stride 0.
pub(crate) struct BcastMap {
    out_shape: Vec<usize>,
    b_strides: Vec<usize>,
}

impl BcastMap {
    pub fn new(out_shape: &[usize], b_shape: &[usize]) -> Self {
        debug_assert_eq!(out_shape.len(), b_shape.len());
        let mut b_strides = vec![0usize; b_shape.len()];
        let mut stride = 1;
        for d in (0..b_shape.len()).rev() {
            b_strides[d] = if b_shape[d] == 1 { 0 } else { stride };
            stride *= b_shape[d];
        }
        BcastMap {
            out_shape: out_shape.to_vec(),
            b_strides,
        }
    }

    pub fn index(&self, mut flat: usize) -> usize {
        let mut idx = 0;
        for d in (0..self.out_shape.len()).rev() {
            let coord = flat % self.out_shape[d];
            flat /= self.out_shape[d];
            idx += coord * self.b_strides[d];
        }
        idx
    }
}
