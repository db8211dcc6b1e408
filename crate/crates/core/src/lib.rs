//! Classical and quantum dissipative double resonance model.

pub mod analysis;
pub mod classical;
pub mod cli;
pub mod effective;
pub mod error;
pub mod model;
pub mod quantum;
pub mod superop;

pub use error::{Error, Result};
pub use model::{derive_geometry, ModelParams, ResonanceGeometry};
