//! Hierarchically robust representation learning at desk scale.
//!
//! A minimax trainer that pairs gradient-direction example augmentation
//! (robustness to per-example perturbations inside a Wasserstein ball) with
//! an adversarial distribution over concepts (robustness to concept
//! re-weighting), together with numerical checks of the accompanying bounds.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
