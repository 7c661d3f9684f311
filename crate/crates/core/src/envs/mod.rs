//! Toy environments with a shared step interface.
//!
//! `Catch` has a credit gap of `height - 1` steps between the decisive paddle
//! moves and the reward. `StallBall` has a zero-reward loop that is safer than
//! any single attack attempt. `Chain` is a small diagnostic. The `Flicker` and
//! `FrameStack` wrappers blank observations and concatenate recent frames.

pub mod catch;
pub mod chain;
pub mod stallball;
mod wrappers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catch::{Catch, CatchConfig, CatchObservation};
pub use chain::{Chain, ChainConfig};
pub use stallball::{Phase, StallBall, StallBallConfig, ATTACK, STALL, STRIKE_A, STRIKE_B};
pub use wrappers::{Flicker, FrameStack};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Puts the environment in its initial state; a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

pub(crate) fn check_action(action: usize, count: usize, done: bool) -> Result<()> {
    if done {
        return Err(Error::Env("step called after the episode terminated".into()));
    }
    if action >= count {
        return Err(Error::Env(format!("action {action} out of range 0..{count}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EnvKind {
    Catch(CatchConfig),
    StallBall(StallBallConfig),
    Chain(ChainConfig),
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Catch(_) => "catch",
            EnvKind::StallBall(_) => "stallball",
            EnvKind::Chain(_) => "chain",
        }
    }
}

/// One of the provided environments, chosen at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseEnv {
    Catch(Catch),
    StallBall(StallBall),
    Chain(Chain),
}

impl BaseEnv {
    pub fn new(kind: &EnvKind) -> Result<Self> {
        Ok(match kind {
            EnvKind::Catch(c) => BaseEnv::Catch(Catch::new(*c)?),
            EnvKind::StallBall(c) => BaseEnv::StallBall(StallBall::new(*c)?),
            EnvKind::Chain(c) => BaseEnv::Chain(Chain::new(*c)?),
        })
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            BaseEnv::Catch(e) => e,
            BaseEnv::StallBall(e) => e,
            BaseEnv::Chain(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            BaseEnv::Catch(e) => e,
            BaseEnv::StallBall(e) => e,
            BaseEnv::Chain(e) => e,
        }
    }
}

impl Environment for BaseEnv {
    fn observation_dim(&self) -> usize {
        self.inner().observation_dim()
    }

    fn action_count(&self) -> usize {
        self.inner().action_count()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner_mut().reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        self.inner_mut().step(action)
    }
}

/// Environment choice plus the wrapper settings applied on top of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Per-observation blanking probability; 0 disables flicker.
    pub flicker: f64,
    pub flicker_seed: u64,
    /// Number of concatenated frames; 1 passes observations through.
    pub frame_stack: usize,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        EnvConfig {
            kind,
            flicker: 0.0,
            flicker_seed: 0,
            frame_stack: 1,
        }
    }

    pub fn build(&self) -> Result<ConfiguredEnv> {
        let base = BaseEnv::new(&self.kind)?;
        let flicker = Flicker::new(base, self.flicker, self.flicker_seed)?;
        FrameStack::new(flicker, self.frame_stack)
    }
}

pub type ConfiguredEnv = FrameStack<Flicker<BaseEnv>>;
