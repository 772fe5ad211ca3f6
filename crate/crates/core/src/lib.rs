//! Structured filter pruning for chain CNNs.
//!
//! A DDPG agent walks the convolutional layers of a network and picks a
//! sparsity ratio for each one under a FLOPS budget. Filters with the lowest
//! L2 norm are removed, successor weights are refit by least squares on
//! cached calibration activations, and the agent is rewarded for low spatial
//! entropy of the remaining convolutional activations (accuracy and random
//! rewards are available for comparison).

pub mod agent;
pub mod data;
pub mod entropy;
pub mod env;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod pruner;
pub mod trainer;

pub use error::{Error, Result};
