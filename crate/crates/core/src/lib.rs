//! Privacy gain and utility loss of publishing synthetic or sanitised tabular data.
//!
//! The crate plays adversarial games against data release mechanisms: a
//! linkability (membership inference) game, an attribute inference game and a
//! per-record utility game. Mechanisms are the built-in synthesizers
//! ([`synth`]), the row-level sanitiser ([`sanitiser`]), raw passthrough, or an
//! external generator invoked as a subprocess.

pub mod attacks;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod features;
pub mod games;
pub mod learners;
pub mod mechanism;
pub mod rng;
pub mod sanitiser;
pub mod synth;

pub use error::{Error, Result};
