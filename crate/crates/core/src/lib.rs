pub mod data;
pub mod error;
pub mod features;
pub mod fl;
pub mod matrix;
pub mod orchestrator;
pub mod privacy;
pub mod seed;
pub mod similarity;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;
