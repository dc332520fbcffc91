pub mod cli;
pub mod completion;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod solvers;

pub use error::{Error, Result};
