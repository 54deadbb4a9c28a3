pub mod algorithms;
pub mod codec;
pub mod collectives;
pub mod engine;
pub mod error;
pub mod harness;
pub mod runner;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
