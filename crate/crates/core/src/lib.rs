//! Active fine-tuning of pairwise image-quality scorers from gMAD examples.

pub mod error;
pub mod formats;
pub mod logistic;
pub mod metrics;
pub mod miner;
pub mod model;
pub mod normal;
pub mod objectives;
pub mod pool;
pub mod protocol;
pub mod sim;
pub mod subjective;
pub mod trainer;

pub use error::{Error, Result};
