//! Minimal CPU network toolkit: dense tensors, convolutions, residual blocks,
//! Adam, and checkpoints. Layers keep explicit forward caches and hand-written
//! backward passes; everything is generic over `f32`/`f64`.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod real;
mod scratch;
pub mod seq;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv, ConvSpec, ConvTranspose};
pub use layers::{BasicBlock, Dims, Linear, Module, Param};
pub use real::Real;
pub use seq::{Layer, Seq};
pub use tensor::Tensor;
