//! Channel-native bit-flipping differential privacy for wireless federated
//! learning.
//!
//! - [`binfloat`]: binary32 fields, shared-exponent fixed point, bitstreams.
//! - [`perturb`]: bit flipping, channel BER models, BER composition.
//! - [`accountant`]: kappa estimation, required BER, Gaussian baseline scale.
//! - [`analysis`]: flip moments, bias bounds, convergence bound, divergence oracle.
//! - [`flsim`]: synthetic federated task and the mechanism arms.

// NaN must fail every range check, so validation uses negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod analysis;
pub mod binfloat;
pub mod error;
pub mod flsim;
pub mod perturb;

pub use error::{Error, Result};
