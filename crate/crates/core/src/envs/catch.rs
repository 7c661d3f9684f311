use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvStep, Environment};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatchObservation {
    /// `width * height` cells, row-major, ball and paddle cells set to 1.
    Grid,
    /// `(ball_x / W, ball_y / H, paddle_x / W)`.
    Compact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatchConfig {
    pub width: usize,
    pub height: usize,
    pub observation: CatchObservation,
}

impl CatchConfig {
    pub fn new(width: usize, height: usize) -> Self {
        CatchConfig {
            width,
            height,
            observation: CatchObservation::Grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 2 {
            return Err(Error::Config(format!(
                "catch needs width >= 3 and height >= 2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn paddle_start(&self) -> usize {
        self.width / 2
    }

    /// Ball columns a reset can produce: those the paddle can reach in time.
    pub fn ball_columns(&self) -> std::ops::RangeInclusive<usize> {
        let p = self.paddle_start();
        let reach = self.height - 1;
        p.saturating_sub(reach)..=(p + reach).min(self.width - 1)
    }
}

/// A ball falls one row per step; the paddle on the bottom row must be under
/// it when it lands. Rewards are +1 for a catch and -1 for a miss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catch {
    config: CatchConfig,
    ball_x: usize,
    ball_y: usize,
    paddle_x: usize,
    done: bool,
}

impl Catch {
    pub fn new(config: CatchConfig) -> Result<Self> {
        config.validate()?;
        let mut env = Catch {
            config,
            ball_x: 0,
            ball_y: 0,
            paddle_x: 0,
            done: false,
        };
        env.reset(0);
        Ok(env)
    }

    /// Places the ball and paddle directly; the ball must be above the bottom row.
    pub fn with_state(config: CatchConfig, ball_x: usize, ball_y: usize, paddle_x: usize) -> Result<Self> {
        let mut env = Catch::new(config)?;
        if ball_x >= config.width || paddle_x >= config.width || ball_y + 1 >= config.height {
            return Err(Error::Env(format!(
                "state ({ball_x}, {ball_y}, {paddle_x}) outside a {}x{} board",
                config.width, config.height
            )));
        }
        env.ball_x = ball_x;
        env.ball_y = ball_y;
        env.paddle_x = paddle_x;
        Ok(env)
    }

    pub fn config(&self) -> &CatchConfig {
        &self.config
    }

    pub fn ball(&self) -> (usize, usize) {
        (self.ball_x, self.ball_y)
    }

    pub fn paddle(&self) -> usize {
        self.paddle_x
    }

    fn observe(&self) -> Vec<f64> {
        let CatchConfig { width, height, .. } = self.config;
        match self.config.observation {
            CatchObservation::Grid => {
                let mut grid = vec![0.0; width * height];
                grid[self.ball_y * width + self.ball_x] = 1.0;
                grid[(height - 1) * width + self.paddle_x] = 1.0;
                grid
            }
            CatchObservation::Compact => vec![
                self.ball_x as f64 / width as f64,
                self.ball_y as f64 / height as f64,
                self.paddle_x as f64 / width as f64,
            ],
        }
    }
}

impl Environment for Catch {
    fn observation_dim(&self) -> usize {
        match self.config.observation {
            CatchObservation::Grid => self.config.width * self.config.height,
            CatchObservation::Compact => 3,
        }
    }

    fn action_count(&self) -> usize {
        3
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball_x = rng.gen_range(self.config.ball_columns());
        self.ball_y = 0;
        self.paddle_x = self.config.paddle_start();
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        check_action(action, 3, self.done)?;
        match action {
            LEFT => self.paddle_x = self.paddle_x.saturating_sub(1),
            RIGHT => self.paddle_x = (self.paddle_x + 1).min(self.config.width - 1),
            _ => {}
        }
        self.ball_y += 1;
        let (reward, terminal) = if self.ball_y == self.config.height - 1 {
            (if self.ball_x == self.paddle_x { 1.0 } else { -1.0 }, true)
        } else {
            (0.0, false)
        };
        self.done = terminal;
        Ok(EnvStep {
            observation: self.observe(),
            reward,
            terminal,
        })
    }
}
