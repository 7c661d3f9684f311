use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvStep, Environment};
use crate::error::{Error, Result};

pub const STALL: usize = 0;
pub const ATTACK: usize = 1;
pub const STRIKE_A: usize = 2;
pub const STRIKE_B: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBallConfig {
    /// Correct strikes needed to score.
    pub attack_length: usize,
    /// Steps per episode.
    pub timer: usize,
}

impl StallBallConfig {
    pub fn new(attack_length: usize, timer: usize) -> Self {
        StallBallConfig { attack_length, timer }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack_length < 2 || self.timer <= 4 * self.attack_length {
            return Err(Error::Config(format!(
                "stallball needs attack_length >= 2 and timer > 4 * attack_length, got d={} T={}",
                self.attack_length, self.timer
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Rally,
    /// Correct strikes made so far in the current attack.
    Attack(usize),
}

/// Rallying is free and scores nothing. An attack needs `attack_length`
/// correct strikes in a row, each shown in the observation: it scores +1 on
/// completion and -1 on the first wrong action. The episode ends when the
/// timer runs out; running out adds no reward of its own.
///
/// Observation: `[rally, attack, strike_a_required, strike_b_required]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StallBall {
    config: StallBallConfig,
    phase: Phase,
    required: usize,
    timer: usize,
    rng: ChaCha8Rng,
    done: bool,
}

impl StallBall {
    pub fn new(config: StallBallConfig) -> Result<Self> {
        config.validate()?;
        let mut env = StallBall {
            config,
            phase: Phase::Rally,
            required: STRIKE_A,
            timer: config.timer,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &StallBallConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn timer(&self) -> usize {
        self.timer
    }

    /// The strike that is correct on the next step, if attacking.
    pub fn required_strike(&self) -> Option<usize> {
        matches!(self.phase, Phase::Attack(_)).then_some(self.required)
    }

    fn draw_required(&mut self) {
        self.required = if self.rng.gen_bool(0.5) { STRIKE_A } else { STRIKE_B };
    }

    fn observe(&self) -> Vec<f64> {
        match self.phase {
            Phase::Rally => vec![1.0, 0.0, 0.0, 0.0],
            Phase::Attack(_) => {
                let a = f64::from(self.required == STRIKE_A);
                vec![0.0, 1.0, a, 1.0 - a]
            }
        }
    }
}

impl Environment for StallBall {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.phase = Phase::Rally;
        self.timer = self.config.timer;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        check_action(action, 4, self.done)?;
        let mut reward = 0.0;
        match self.phase {
            Phase::Rally => {
                if action == ATTACK {
                    self.phase = Phase::Attack(0);
                    self.draw_required();
                }
            }
            Phase::Attack(progress) => {
                if action == self.required {
                    if progress + 1 == self.config.attack_length {
                        reward = 1.0;
                        self.phase = Phase::Rally;
                    } else {
                        self.phase = Phase::Attack(progress + 1);
                        self.draw_required();
                    }
                } else {
                    reward = -1.0;
                    self.phase = Phase::Rally;
                }
            }
        }
        self.timer -= 1;
        self.done = self.timer == 0;
        Ok(EnvStep {
            observation: self.observe(),
            reward,
            terminal: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> StallBall {
        StallBall::new(StallBallConfig::new(3, 200)).unwrap()
    }

    #[test]
    fn stalling_forever_returns_zero() {
        let mut e = env();
        e.reset(5);
        let mut total = 0.0;
        for i in 0..200 {
            let s = e.step(STALL).unwrap();
            total += s.reward;
            assert_eq!(s.terminal, i == 199);
        }
        assert_eq!(total, 0.0);
        assert!(e.step(STALL).is_err());
    }

    #[test]
    fn attack_then_three_correct_strikes_scores_one() {
        let mut e = env();
        e.reset(11);
        let mut total = e.step(ATTACK).unwrap().reward;
        for _ in 0..3 {
            let strike = e.required_strike().unwrap();
            total += e.step(strike).unwrap().reward;
        }
        assert_eq!(total, 1.0);
        assert_eq!(e.phase(), Phase::Rally);
    }

    #[test]
    fn wrong_action_in_attack_costs_one() {
        let mut e = env();
        e.reset(2);
        e.step(ATTACK).unwrap();
        let s = e.step(STALL).unwrap();
        assert_eq!(s.reward, -1.0);
        assert_eq!(e.phase(), Phase::Rally);
        e.step(ATTACK).unwrap();
        let wrong = if e.required_strike() == Some(STRIKE_A) { STRIKE_B } else { STRIKE_A };
        assert_eq!(e.step(wrong).unwrap().reward, -1.0);
    }

    #[test]
    fn reset_shows_rally() {
        let mut e = env();
        assert_eq!(e.reset(0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.timer(), 200);
        let obs = e.step(ATTACK).unwrap().observation;
        assert_eq!(obs[1], 1.0);
        assert_eq!(obs[2] + obs[3], 1.0);
    }

    #[test]
    fn strikes_while_rallying_are_stalls() {
        let mut e = env();
        e.reset(0);
        for a in [STALL, STRIKE_A, STRIKE_B] {
            let s = e.step(a).unwrap();
            assert_eq!(s.reward, 0.0);
            assert_eq!(e.phase(), Phase::Rally);
        }
    }

    #[test]
    fn config_bounds() {
        assert!(StallBall::new(StallBallConfig::new(1, 100)).is_err());
        assert!(StallBall::new(StallBallConfig::new(3, 12)).is_err());
        assert!(StallBall::new(StallBallConfig::new(3, 13)).is_ok());
    }
}
