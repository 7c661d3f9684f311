use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::agent::{Agent, Checkpoint};
use crate::envs::{ConfiguredEnv, Environment};
use crate::error::{Error, Result};
use crate::nn::LstmState;
use crate::replay::{ReplayBuffer, Transition};

pub const METRICS_HEADER: &str = "epoch,env_steps,train_loss_mean,eval_mean_return,eval_episodes,epsilon,wall_seconds";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub env_steps: u64,
    pub train_loss_mean: f64,
    pub eval_mean_return: f64,
    pub eval_episodes: u64,
    pub epsilon: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.env_steps,
            self.train_loss_mean,
            self.eval_mean_return,
            self.eval_episodes,
            self.epsilon,
            self.wall_seconds
        )
    }
}

/// Everything besides the agent needed to continue a run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct LoopState {
    buffer: ReplayBuffer,
    env: ConfiguredEnv,
    observation: Vec<f64>,
    hidden: LstmState,
    episode: u64,
    episode_step: u64,
    env_steps: u64,
    epoch: u64,
    loss_sum: f64,
    loss_count: u64,
    wall_seconds: f64,
}

/// The outer loop: act, store, train once per environment step, and
/// evaluate every `eval_interval` train steps.
pub struct Trainer {
    config: RunConfig,
    agent: Agent,
    rng: ChaCha8Rng,
    state: LoopState,
    started: Instant,
}

fn eval_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ 0x5EED
}

impl Trainer {
    /// Builds the run and fills the replay buffer with random-policy experience.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = Agent::new(config.agent.clone(), rng.r#gen())?;
        let mut env = config.env.build()?;
        let observation = env.reset(rng.r#gen());
        let mut trainer = Trainer {
            state: LoopState {
                buffer: ReplayBuffer::new(config.agent.replay)?,
                env,
                observation,
                hidden: agent.hidden().clone(),
                episode: 0,
                episode_step: 0,
                env_steps: 0,
                epoch: 0,
                loss_sum: 0.0,
                loss_count: 0,
                wall_seconds: 0.0,
            },
            config,
            agent,
            rng,
            started: Instant::now(),
        };
        for _ in 0..trainer.config.warmup_steps {
            trainer.env_step(1.0)?;
        }
        Ok(trainer)
    }

    pub fn resume(config: RunConfig, checkpoint: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let blob = checkpoint
            .resume
            .as_ref()
            .ok_or_else(|| Error::Parameters("checkpoint has no [resume] section".into()))?;
        let state: LoopState =
            bincode::deserialize(blob).map_err(|e| Error::Parameters(format!("bad resume state: {e}")))?;
        let mut agent = Agent::from_checkpoint(config.agent.clone(), checkpoint)?;
        agent.set_hidden(state.hidden.clone())?;
        Ok(Trainer {
            config,
            agent,
            rng: checkpoint.rng.clone(),
            state,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.state.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.state.env_steps
    }

    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    pub fn finished(&self) -> bool {
        self.agent.step() >= self.config.total_train_steps
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut state = self.state.clone();
        state.hidden = self.agent.hidden().clone();
        state.wall_seconds = self.wall_seconds();
        let mut ck = self.agent.to_checkpoint(&self.rng);
        ck.resume = Some(bincode::serialize(&state).map_err(|e| Error::Parameters(e.to_string()))?);
        Ok(ck)
    }

    fn wall_seconds(&self) -> f64 {
        if self.config.record_wall_clock {
            self.state.wall_seconds + self.started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn env_step(&mut self, epsilon: f64) -> Result<()> {
        let s = &mut self.state;
        let action = self.agent.act(&s.observation, epsilon, &mut self.rng)?;
        let step = s.env.step(action)?;
        s.buffer.append(Transition {
            observation: std::mem::take(&mut s.observation),
            action,
            reward: step.reward,
            next_observation: step.observation.clone(),
            terminal: step.terminal,
            episode: s.episode,
            step: s.episode_step,
        })?;
        s.env_steps += 1;
        if step.terminal {
            s.episode += 1;
            s.episode_step = 0;
            s.observation = s.env.reset(self.rng.r#gen());
            self.agent.reset_hidden();
        } else {
            s.episode_step += 1;
            s.observation = step.observation;
        }
        Ok(())
    }

    /// Trains up to the next evaluation point and returns its metrics row,
    /// or `None` if the run ends first.
    pub fn run_epoch(&mut self) -> Result<Option<MetricsRow>> {
        let interval = self.config.eval_interval;
        while !self.finished() {
            let epsilon = self.agent.training_epsilon();
            self.env_step(epsilon)?;
            let loss = self.agent.train_step(&self.state.buffer, &mut self.rng)?;
            self.state.loss_sum += loss;
            self.state.loss_count += 1;
            if self.agent.step() % interval == 0 {
                return self.evaluate().map(Some);
            }
        }
        Ok(None)
    }

    fn evaluate(&mut self) -> Result<MetricsRow> {
        self.state.epoch += 1;
        let mut env = self.config.env.build()?;
        let eval = self.agent.evaluate(
            &mut env,
            self.config.eval_frame_budget,
            eval_seed(self.config.seed, self.state.epoch),
        )?;
        let row = MetricsRow {
            epoch: self.state.epoch,
            env_steps: self.state.env_steps,
            train_loss_mean: self.state.loss_sum / self.state.loss_count.max(1) as f64,
            eval_mean_return: eval.mean_return,
            eval_episodes: eval.episodes,
            epsilon: self.agent.training_epsilon(),
            wall_seconds: self.wall_seconds(),
        };
        self.state.loss_sum = 0.0;
        self.state.loss_count = 0;
        Ok(row)
    }
}

/// Writes rows to `metrics.csv` and checkpoints to `checkpoint.bin` in `dir`.
pub struct RunOutput {
    dir: PathBuf,
    metrics: File,
}

impl RunOutput {
    /// Starts a fresh metrics file, or for a resumed run keeps only the
    /// rows up to `resumed_epoch`.
    pub fn open(dir: &Path, resumed_epoch: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(METRICS_FILE);
        let mut kept = vec![METRICS_HEADER.to_owned()];
        if let Some(epoch) = resumed_epoch
            && path.exists()
        {
            for line in BufReader::new(File::open(&path)?).lines().skip(1) {
                let line = line?;
                let row_epoch: u64 = line
                    .split(',')
                    .next()
                    .and_then(|e| e.parse().ok())
                    .ok_or_else(|| Error::Corrupt {
                        path: path.clone(),
                        reason: format!("bad metrics row {line:?}"),
                    })?;
                if row_epoch <= epoch {
                    kept.push(line);
                }
            }
        }
        let mut metrics = OpenOptions::new().write(true).create(true).truncate(true).open(&path)?;
        for line in kept {
            writeln!(metrics, "{line}")?;
        }
        metrics.flush()?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.csv_line())?;
        self.metrics.flush()?;
        Ok(())
    }

    pub fn save_checkpoint(&self, trainer: &Trainer) -> Result<()> {
        trainer.checkpoint()?.save(&self.dir.join(CHECKPOINT_FILE))
    }
}

/// Runs (or resumes) training to completion, writing metrics and checkpoints.
pub fn run_train(config: RunConfig, dir: &Path, resume: Option<&Path>) -> Result<Vec<MetricsRow>> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, &Checkpoint::load(path)?)?,
        None => Trainer::new(config)?,
    };
    let mut out = RunOutput::open(dir, resume.map(|_| trainer.epoch()))?;
    let mut rows = Vec::new();
    while let Some(row) = trainer.run_epoch()? {
        out.append(&row)?;
        out.save_checkpoint(&trainer)?;
        rows.push(row);
    }
    out.save_checkpoint(&trainer)?;
    Ok(rows)
}
