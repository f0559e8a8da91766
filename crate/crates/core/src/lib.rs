//! Downwash-aware and L1-augmented MPC for tightly stacked quadrotor teams,
//! with the simulator, learned residual model and experiment plumbing around it.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod downwash;
pub mod error;
pub mod knode;
pub mod l1;
pub mod ocp;
pub mod rigid_body;
pub mod sim;

pub use error::{Error, Result};
