pub mod cli;
pub mod error;
pub mod estimator;
pub mod gan;
pub mod hpc;
pub mod imaging;
pub mod inference;
pub mod model;
pub mod planner;
pub mod sim;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
