//! Dense tensors and a tape-based reverse-mode autograd.
//!
//! The crate is deliberately narrow: it provides exactly the operators the
//! image-to-image networks in `windflow-core` need (strided 2D convolution and
//! its transpose, instance normalization, attention primitives, the usual
//! pointwise activations and the scalar losses), generic over `f32` and `f64`
//! so gradients can be checked at double precision. Every kernel is
//! single-threaded, which keeps results bit-reproducible.

mod conv;
mod error;
mod float;
mod optim;
mod params;
mod tape;
mod tensor;

pub use conv::{conv_out_size, conv_transpose_out_size};
pub use error::{Result, TensorError};
pub use float::Float;
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, Params};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
