//! Looped signalized-corridor bus operation simulator with a multi-strategy
//! control action space (station holding, cruise speed, signal priority),
//! classical baseline controllers, and a distributed policy-gradient trainer.

pub mod control;
pub mod corridor;
pub mod disturbance;
pub mod engine;
mod error;
pub mod nn;
pub mod observation;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
