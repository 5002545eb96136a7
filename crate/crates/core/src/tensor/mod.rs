//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations in execution order (which is already a
//! topological order); [`Tape::backward`] walks the records once in
//! reverse, accumulating adjoints. Element type is selectable: `f32` for
//! training, `f64` for finite-difference gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::finite_diff_check;
pub use params::{BoundParams, ParamEntry, Params};
pub use tape::{Tape, TensorId};

use num_traits::{Float, NumCast};

/// Element type of tape tensors.
pub trait Scalar:
    Float + NumCast + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossy conversion from `f64` literals into the working element type.
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite scalar conversion")
}
