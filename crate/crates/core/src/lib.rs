//! Controllable residual restoration: a small reverse-mode autodiff engine,
//! image degradation synthesis, Beta-distributed training sampling, the
//! conditioned restoration network, and its training/evaluation loop.

pub mod gradcheck;
pub mod imaging;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use imaging::{DegradationSpace, DegradationSpec, Image, ImageError};
pub use rng::Rng;
pub use tensor::{Scalar, Tape, Tensor, TensorError, Var};
pub use model::{ArchConfig, Model, ModelError};
