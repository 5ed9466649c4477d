//! Training driver, evaluation, file formats and the `clnet` command line
//! on top of [`clnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embfile;
pub mod error;
pub mod evaluate;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
