pub mod dataset;
pub mod encoder;
pub mod error;
pub mod featurizer;
pub mod image;
pub mod rng;
pub mod sampling;
pub use error::{Error, Result};
