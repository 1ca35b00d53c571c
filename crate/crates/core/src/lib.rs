pub mod benchmark;
pub mod causal;
pub mod data;
pub mod encoder;
pub mod error;
pub mod pipeline;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
