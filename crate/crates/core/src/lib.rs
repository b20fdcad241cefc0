pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod select;
pub mod sim;
pub mod stream;
pub mod svm;

pub use error::{Error, Result};
