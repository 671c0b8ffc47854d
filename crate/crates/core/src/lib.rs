//! Online meta-learning of within-task tuning parameters: the step size and
//! starting point of projected online gradient, and the learning rate or prior
//! of exponentially weighted aggregation.

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod loss;
pub mod meta_loss;
pub mod meta_strategy;
pub mod params;
pub mod projection;
pub mod solver;
pub mod within_task;

pub use error::{Error, Result};
