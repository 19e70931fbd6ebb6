//! Desk-scale laboratory for the empirical-risk landscape of
//! overparametrized convolutional networks.

// `!(x > 0.0)` checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod io;
pub mod mds;
pub mod nn;
pub mod poly;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
