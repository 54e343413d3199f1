#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod io;
pub mod mixture;
pub mod parallel;
pub mod procedure;
pub mod reference;
pub mod simulation;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
