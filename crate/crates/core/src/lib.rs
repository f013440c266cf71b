//! Integrated assessment model solvers: deterministic transcription,
//! stochastic dynamic programming and robust decision rules.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod calibration;
pub mod det;
pub mod error;
pub mod model;
pub mod optim;
pub mod robust;
pub mod run;
pub mod simulate;
pub mod stochastic;
pub mod vfi;

pub use error::{IamError, Result};
