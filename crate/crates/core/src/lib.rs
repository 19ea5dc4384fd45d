//! MCD-Net: a lightweight MobileNetV2 + CBAM + DeepLabV3+ network for
//! binary moraine segmentation from optical imagery, together with the
//! data pipeline, trainer, evaluator and complexity profiler around it.
//!
//! Everything runs on a small self-contained reverse-mode tensor engine
//! (see [`tensor`]) so that gradients, metrics and complexity numbers can
//! be verified against independent oracles at desk scale.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod png_io;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
