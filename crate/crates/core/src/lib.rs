//! Hyperfine-qubit fluorescence readout modelling: angular algebra, atomic
//! structure, rate models, a multilevel Lindblad engine, parameter scans and
//! fits for experimental-style data.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod angular;
pub mod atom;
pub mod config;
pub mod coupling;
pub mod error;
pub mod lindblad;
pub mod rates;
pub mod scan;

pub use error::{Error, Result};
