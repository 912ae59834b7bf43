//! Few-shot feature calibration on abstract feature vectors.
//!
//! Novel-class centers are recalibrated with reverse samples generated by a
//! small converter network and augmented with variance borrowed from similar
//! base classes; misclassified samples are reweighted by comparing local
//! densities of their own and their most similar class. A synthetic harness
//! runs both modules end to end.

pub mod ccva;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod fdbo;
pub mod geometry;
pub mod harness;
pub mod ifc;
pub mod io;
pub mod memory_bank;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
