//! Deep recurrent Q-learning with forward-view Watkins Q(λ) traces.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod replay;
pub mod returns;

pub use error::{Error, Result};
