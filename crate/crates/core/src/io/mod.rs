//! On-disk formats.

pub(crate) mod binary;
pub mod checkpoint;
pub mod feature_file;
pub mod metrics;
