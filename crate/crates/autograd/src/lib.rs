//! A small eager autodiff engine.
//!
//! Every operation on a [`Graph`] computes its value immediately and records
//! enough information to propagate gradients backwards. Images use the
//! batch×height×width×channels (NHWC) layout throughout, convolution kernels
//! are stored as `[kh, kw, in_channels, out_channels]` and transposed
//! convolution kernels as `[kh, kw, out_channels, in_channels]`.

mod conv;
mod error;
mod gemm;
mod graph;
mod tensor;

pub use conv::{ConvGeometry, Padding};
pub use error::ShapeError;
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use tensor::Tensor;
