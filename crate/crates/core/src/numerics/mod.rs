//! Dense tensor arithmetic: layer forward/backward passes, patch extraction
//! and a ridge-regularized least-squares solver.
//!
//! Storage is `f32`; dot products and the least-squares solve accumulate in
//! `f64`. Every routine is a pure function of its inputs and accumulates in a
//! fixed order, so repeated calls are bit-identical.

mod conv;
mod im2col;
mod layers;
mod lstsq;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward};
pub use im2col::{im2col, ConvGeometry, PatchMatrix, PatchProvenance};
pub use layers::{layer_backward, layer_forward, linear_forward, LayerOp, Params};
pub use lstsq::{
    least_squares, least_squares_dual, residual_sq, solve_regularized, LstsqSolution, Matrix,
};
pub use tensor::Tensor;
