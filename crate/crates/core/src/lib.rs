//! Open-set intersection intention prediction.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod heap;
pub mod map;
pub mod model;
pub mod numcore;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
