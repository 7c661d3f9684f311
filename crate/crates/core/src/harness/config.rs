//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted names. Every
//! key is optional; unknown keys and duplicates are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{AgentConfig, AgentMode};
use crate::envs::{CatchConfig, CatchObservation, ChainConfig, EnvConfig, EnvKind, StallBallConfig};
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::replay::ReplayConfig;
use crate::returns::ReturnSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub total_train_steps: u64,
    pub eval_interval: u64,
    pub eval_frame_budget: u64,
    pub seed: u64,
    /// Random-policy transitions stored before the first train step.
    pub warmup_steps: u64,
    /// Record elapsed time in `wall_seconds`; off keeps metrics byte-reproducible.
    pub record_wall_clock: bool,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.eval_interval == 0 || self.eval_frame_budget == 0 {
            return Err(Error::Config("train.eval_interval and train.eval_frames must be >= 1".into()));
        }
        let env = self.env.build()?;
        use crate::envs::Environment;
        if env.observation_dim() != self.agent.network.input_dim
            || env.action_count() != self.agent.network.action_count
        {
            return Err(Error::Config(format!(
                "network expects {} inputs and {} actions, environment has {} and {}",
                self.agent.network.input_dim,
                self.agent.network.action_count,
                env.observation_dim(),
                env.action_count()
            )));
        }
        Ok(())
    }
}

/// Raw `key → (line, value)` pairs.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Config(format!("line {}: bad key {key:?}", i + 1)));
        }
        if pairs.insert(key.to_owned(), (i + 1, value.trim().to_owned())).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(pairs)
}

struct Keys(BTreeMap<String, (usize, String)>);

impl Keys {
    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: bad value {v:?} for {key}"))),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.raw(key).map_or_else(|| default.to_owned(), |(_, v)| v)
    }

    fn finish(self) -> Result<()> {
        match self.0.into_iter().next() {
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key {key}"))),
            None => Ok(()),
        }
    }
}

fn widths(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    if text.is_empty() || text == "none" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad network.features entry {w:?}")))
        })
        .collect()
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut k = Keys(parse_pairs(text)?);

    let env_name = k.string("env", "catch");
    let kind = match env_name.as_str() {
        "catch" => {
            let observation = match k.string("env.observation", "grid").as_str() {
                "grid" => CatchObservation::Grid,
                "compact" => CatchObservation::Compact,
                other => return Err(Error::Config(format!("unknown env.observation {other:?}"))),
            };
            EnvKind::Catch(CatchConfig {
                width: k.get("env.width", 5)?,
                height: k.get("env.height", 5)?,
                observation,
            })
        }
        "stallball" => EnvKind::StallBall(StallBallConfig::new(
            k.get("env.attack_length", 3)?,
            k.get("env.timer", 200)?,
        )),
        "chain" => EnvKind::Chain(ChainConfig::new(k.get("env.length", 5)?)),
        other => return Err(Error::Config(format!("unknown env {other:?}"))),
    };

    let mode = match k.string("mode", "recurrent").as_str() {
        "recurrent" => AgentMode::Recurrent,
        "feedforward" => AgentMode::Feedforward,
        other => return Err(Error::Config(format!("unknown mode {other:?}"))),
    };
    let frame_stack = k.get(
        "frame_stack",
        match mode {
            AgentMode::Recurrent => 1,
            AgentMode::Feedforward => 2,
        },
    )?;
    let env = EnvConfig {
        kind,
        flicker: k.get("env.flicker", 0.0)?,
        flicker_seed: k.get("env.flicker_seed", 0)?,
        frame_stack,
    };
    let (obs_dim, actions) = {
        use crate::envs::Environment;
        let base = EnvConfig {
            frame_stack: 1,
            flicker: 0.0,
            ..env.clone()
        }
        .build()?;
        (base.observation_dim(), base.action_count())
    };
    let features = widths(&k.string("network.features", "32"))?;
    let hidden = k.get("network.hidden", 32)?;
    let network = match mode {
        AgentMode::Recurrent => NetworkSpec::recurrent(obs_dim * frame_stack, features, hidden, actions),
        AgentMode::Feedforward => NetworkSpec::feedforward(obs_dim * frame_stack, features, hidden, actions),
    };

    let defaults = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        kind: k.get::<OptimizerKind>("optimizer.kind", defaults.kind)?,
        learning_rate: k.get("optimizer.learning_rate", defaults.learning_rate)?,
        rmsprop_decay: k.get("optimizer.rmsprop_decay", defaults.rmsprop_decay)?,
        rmsprop_epsilon: k.get("optimizer.rmsprop_epsilon", defaults.rmsprop_epsilon)?,
        adam_beta1: k.get("optimizer.adam_beta1", defaults.adam_beta1)?,
        adam_beta2: k.get("optimizer.adam_beta2", defaults.adam_beta2)?,
        adam_epsilon: k.get("optimizer.adam_epsilon", defaults.adam_epsilon)?,
        clip_norm: match k.string("optimizer.clip_norm", "none").as_str() {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("bad optimizer.clip_norm {v:?}")))?,
            ),
        },
    };
    let rd = ReturnSpec::default();
    let returns = ReturnSpec {
        gamma: k.get("gamma", rd.gamma)?,
        lambda: k.get("lambda", rd.lambda)?,
        cutoff_threshold: k.get("trace_cutoff", rd.cutoff_threshold)?,
    };
    let pd = ReplayConfig::default();
    let replay = ReplayConfig {
        capacity: k.get("replay.capacity", pd.capacity)?,
        burn_in: k.get("replay.burn_in", pd.burn_in)?,
        train_steps: k.get("replay.train_steps", pd.train_steps)?,
        batch_size: k.get("replay.batch_size", pd.batch_size)?,
    };

    let mut agent = AgentConfig::new(network);
    agent.returns = returns;
    agent.optimizer = optimizer;
    agent.replay = replay;
    agent.mode = mode;
    agent.frame_stack = frame_stack;
    agent.target_sync_interval = k.get("target_sync_interval", agent.target_sync_interval)?;
    agent.exploration.start = k.get("exploration.start", agent.exploration.start)?;
    agent.exploration.end = k.get("exploration.end", agent.exploration.end)?;
    agent.exploration.decay_steps = k.get("exploration.decay_steps", agent.exploration.decay_steps)?;
    agent.eval_epsilon = k.get("eval_epsilon", agent.eval_epsilon)?;

    let config = RunConfig {
        env,
        total_train_steps: k.get("train.total_steps", 100_000)?,
        eval_interval: k.get("train.eval_interval", 10_000)?,
        eval_frame_budget: k.get("train.eval_frames", 2_000)?,
        warmup_steps: k.get("train.warmup", (replay.window() * replay.batch_size) as u64)?,
        record_wall_clock: k.get("train.wall_clock", false)?,
        seed: k.get("seed", 0)?,
        output_dir: k.raw("out").map(|(_, v)| PathBuf::from(v)),
        agent,
    };
    k.finish()?;
    config.validate()?;
    Ok(config)
}
