//! Minimal deterministic N-D tensor engine with reverse-mode gradients.
//!
//! Tensors are row-major value buffers. Differentiable computation runs
//! through a [`Graph`]: operators append immutable nodes, `backward`
//! sweeps the tape in reverse and accumulates gradients additively, so a
//! value consumed by k operators receives the sum of k contributions.
//! All operators are single-threaded and iterate in a fixed order, which
//! makes every forward and backward pass bitwise deterministic.

mod check;
mod conv;
mod graph;
mod interp;
mod loss;
mod norm;
mod pool;
mod scalar;

pub use check::{finite_diff_check, finite_diff_check_multi, grad_rel_err};
pub use conv::Conv2dSpec;
pub use graph::{Graph, TensorId};
pub use interp::axis_taps as bilinear_axis_taps;
pub use norm::BatchStats;
pub use scalar::{DType, Scalar};

use crate::error::{Error, Result};

/// Plain host-side tensor: row-major values plus shape. This is the
/// at-rest form of parameters, images and checkpoints; differentiable
/// computation happens on graph nodes instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Convert element type, e.g. an `f32` parameter set to `f64` for
    /// finite-difference verification.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

pub(crate) fn check_same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: shape mismatch {a:?} vs {b:?}"
        )));
    }
    Ok(())
}
