//! Quantum trajectories on complex projective space.

pub mod channel;
pub mod cli;
pub mod error;
pub mod instrument;
pub mod limits;
pub mod linalg;
pub mod operator;
pub mod projective;
pub mod purification;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use instrument::{builtin, Atom, Builtin, Instrument, ValidationReport};
pub use projective::{ComplexMatrix, ProjectivePoint, C64};
