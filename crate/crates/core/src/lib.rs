//! Fixed multibeam beam-generation matrices for GEO satellites.

pub mod channel;
pub mod design;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod link;
pub mod metrics;
pub mod scenario;
pub mod stats;
pub mod validate;

pub use error::{BeamError, Result};
