//! Monotone prediction and training for ReLU networks.
//!
//! A trained network need not be monotone in the features where domain
//! knowledge says it should be. This crate wraps such a network with its
//! upper or lower monotone envelope at prediction time, using a certified
//! extremum solver over axis-aligned sub-boxes, and retrains networks on the
//! counterexamples that solver finds.

pub mod cgl;
pub mod data;
pub mod envelope;
pub mod error;
pub mod nn;
pub mod reference;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
