//! A small reverse-mode automatic differentiation engine.
//!
//! Values live on a [`Tape`]; every operation on a [`Var`] records its
//! output together with a vector-Jacobian closure. [`Tape::backward`] sweeps
//! the record in reverse and returns gradients for leaves and parameters.
//!
//! The engine is generic over [`Scalar`] so the same network code runs in
//! `f32` for training and in `f64` for finite-difference verification.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use nn::{Ctx, Mode};
pub use params::{ParamId, ParamKind, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
