pub mod batching;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod losses;
pub mod model;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
