use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment};
use crate::error::{Error, Result};

/// Replaces each emitted observation by zeros with probability `p`.
///
/// The blanking stream is reseeded on every reset from the wrapper seed and
/// the reset seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flicker<E> {
    inner: E,
    p: f64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<E: Environment> Flicker<E> {
    pub fn new(inner: E, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("flicker probability must be in [0, 1), got {p}")));
        }
        Ok(Flicker {
            inner,
            p,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn filter(&mut self, mut obs: Vec<f64>) -> Vec<f64> {
        if self.rng.gen_bool(self.p) {
            obs.iter_mut().for_each(|x| *x = 0.0);
        }
        obs
    }
}

impl<E: Environment> Environment for Flicker<E> {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_count(&self) -> usize {
        self.inner.action_count()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed);
        let obs = self.inner.reset(seed);
        self.filter(obs)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let mut step = self.inner.step(action)?;
        step.observation = self.filter(step.observation);
        Ok(step)
    }
}

/// Concatenates the last `k` observations, oldest first, zero-padded after reset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStack<E> {
    inner: E,
    k: usize,
    frames: VecDeque<Vec<f64>>,
}

impl<E: Environment> FrameStack<E> {
    pub fn new(inner: E, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("frame_stack must be >= 1".into()));
        }
        Ok(FrameStack {
            inner,
            k,
            frames: VecDeque::with_capacity(k),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn push(&mut self, obs: Vec<f64>) -> Vec<f64> {
        if self.frames.len() == self.k {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
        self.frames.iter().flatten().copied().collect()
    }
}

impl<E: Environment> Environment for FrameStack<E> {
    fn observation_dim(&self) -> usize {
        self.k * self.inner.observation_dim()
    }

    fn action_count(&self) -> usize {
        self.inner.action_count()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(seed);
        self.frames.clear();
        for _ in 1..self.k {
            self.frames.push_back(vec![0.0; obs.len()]);
        }
        self.push(obs)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let step = self.inner.step(action)?;
        Ok(EnvStep {
            observation: self.push(step.observation),
            ..step
        })
    }
}
