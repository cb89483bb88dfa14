pub mod cli;
pub mod config;
pub mod data;
pub mod dec;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};
