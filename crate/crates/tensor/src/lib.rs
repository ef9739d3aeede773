//! Minimal dense tensor library with reverse-mode automatic
//! differentiation, built for training small image models on the CPU.
//!
//! Tensors are generic over [`Element`] (`f32` or `f64`). Ops return
//! `Result` and record a backward closure whenever one of their inputs
//! requires gradients.

mod element;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod probes;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use ops::{broadcast_shape, LAYER_NORM_EPS};
pub use optim::{Adam, StepLr};
pub use tensor::{is_grad_enabled, no_grad, standard_normal_vec, Tensor};
