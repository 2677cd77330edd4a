pub mod calibration;
pub mod cavity;
pub mod chain;
pub mod error;
pub mod geometry;
pub mod optimize;
pub mod pipeline;
pub mod sensitivity;
pub mod sensor;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
