//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! Every value in a [`Graph`] is an `Array2`. Feature maps produced by the
//! convolution ops are stored channel-major as `[channels, images * h * w]`,
//! which keeps convolution a single matrix product after `im2col`.
//!
//! The graph is generic over the scalar type so the same model code runs in
//! single precision for training and double precision for gradient checks.

mod conv;
mod graph;
mod init;
mod params;

pub use conv::ConvGeometry;
pub use graph::{Gradients, Graph, Var};
pub use init::Init;
pub use params::{Param, ParamGroup, ParamId, ParamStore};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating point element type accepted by the autodiff graph.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Default
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    /// Converts an `f64` literal into this type.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }

    fn of_f32(v: f32) -> Self {
        <Self as FromPrimitive>::from_f32(v).expect("finite conversion")
    }

    fn as_f32(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).expect("finite conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}
