//! Minimal reverse-mode autodiff with exactly the primitives a small
//! pointer-generator seq2seq model needs: dense arrays, matrix-vector
//! products, concatenation, elementwise ops, masked softmax, embedding
//! lookup with sparse gradients, an LSTM cell, dropout, Adam, and seeded
//! splittable RNG.
//!
//! Everything is generic over the element type: train in `f32`, run
//! gradient checks in `f64`.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, SubAssign};

use num_traits::Float;

pub mod adam;
pub mod arr;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod param;
pub mod rng;

/// Element type of arrays and graphs.
pub trait Scalar:
    Float + AddAssign + SubAssign + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + AddAssign + SubAssign + Debug + Display + Default + Send + Sync + 'static
{
}

pub use adam::AdamState;
pub use arr::Arr;
pub use graph::{dropout_mask, Graph, Value};
pub use lstm::{lstm_cell, LstmCellRef, LstmWeights};
pub use param::Param;
pub use rng::Rng;
