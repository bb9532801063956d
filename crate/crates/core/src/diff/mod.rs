//! Reverse-mode differentiation over dense matrices, Adam, and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
mod store;
mod tape;
mod tensor;

pub use store::{AdamConfig, Gradients, ParamId, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

use crate::Scalar;

/// 0/1 keep mask for inverted dropout.
pub fn dropout_mask<S: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize, rate: f64) -> Tensor<S> {
    Tensor::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < rate {
            S::zero()
        } else {
            S::one()
        }
    })
}
