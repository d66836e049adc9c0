pub mod aggregate;
pub mod backbone;
pub mod encoder;
pub mod error;
pub mod io;
pub mod matcher;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod retrieval;
pub mod selftest;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
