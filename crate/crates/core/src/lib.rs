//! Output-stationary systolic mesh simulator with PE-level transient fault
//! injection, coupled to a small symmetric-int8 inference engine through
//! single-tile offload.

pub mod campaign;
pub mod error;
pub mod fault;
pub mod matrix;
pub mod mesh;
pub mod qnn;
pub mod tiling;

pub use error::{Error, Result};
