//! Small dense-tensor autodiff engine: `f64` tensors, a single-use
//! computation tape with reverse-mode gradients, named parameter stores,
//! and an Adam optimizer.

mod adam;
mod error;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use params::ParamStore;
pub use tape::{Tape, Var, DEFAULT_LEAKY_SLOPE};
pub use tensor::Tensor;
