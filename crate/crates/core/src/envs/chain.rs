use serde::{Deserialize, Serialize};

use super::{check_action, EnvStep, Environment};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub length: usize,
}

impl ChainConfig {
    pub fn new(length: usize) -> Self {
        ChainConfig { length }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config(format!("chain length must be >= 2, got {}", self.length)));
        }
        Ok(())
    }

    pub fn step_limit(&self) -> usize {
        4 * self.length
    }
}

/// Walk right along `length` states; reaching the end pays +1 and terminates.
/// Episodes are cut off with no reward after `4 * length` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    config: ChainConfig,
    position: usize,
    steps: usize,
    done: bool,
}

impl Chain {
    pub fn new(config: ChainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Chain {
            config,
            position: 0,
            steps: 0,
            done: false,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.config.length];
        obs[self.position] = 1.0;
        obs
    }
}

impl Environment for Chain {
    fn observation_dim(&self) -> usize {
        self.config.length
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        check_action(action, 2, self.done)?;
        self.position = match action {
            LEFT => self.position.saturating_sub(1),
            _ => self.position + 1,
        };
        self.steps += 1;
        let reached = self.position + 1 == self.config.length;
        self.done = reached || self.steps >= self.config.step_limit();
        Ok(EnvStep {
            observation: self.observe(),
            reward: if reached { 1.0 } else { 0.0 },
            terminal: self.done,
        })
    }
}
