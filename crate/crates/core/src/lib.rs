pub mod autoint;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod numkit;
pub mod prodnet;
pub mod rng;
pub mod simulate;
pub mod stpp;
pub mod train;

pub use error::{Error, Result};
