pub mod calculus;
pub mod error;
pub mod flow;
pub mod io;
pub mod hym;
pub mod lattice;
pub mod lie;
pub mod monitors;
pub mod spectral;

pub use error::{Error, Result};
