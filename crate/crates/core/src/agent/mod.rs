//! The recurrent Q(λ) agent and its feedforward DQN baseline.
//!
//! Acting is ε-greedy on the online network with a hidden state carried
//! across the steps of an episode. Training samples sub-trajectories, warms
//! the hidden state on the burn-in prefix, and regresses the chosen-action
//! Q-values on truncated λ-return targets bootstrapped from a periodically
//! synced target network.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{
    backward_sequence, forward_sequence, infer_sequence, init_parameters, CoreKind, GradientSet,
    LstmState, NetworkSpec, ParameterSet, Tensor,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::replay::{ReplayBuffer, ReplayConfig, SubTrajectory};
use crate::returns::{truncated_lambda_targets, ReturnSpec, TrajectoryView};

pub use checkpoint::{rng_from_hex, rng_to_hex, Checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentMode {
    Recurrent,
    Feedforward,
}

/// Linear ε schedule from `start` to `end` over `decay_steps` train steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration {
            start: 1.0,
            end: 0.1,
            decay_steps: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub network: NetworkSpec,
    pub returns: ReturnSpec,
    pub optimizer: OptimizerConfig,
    pub replay: ReplayConfig,
    pub target_sync_interval: u64,
    pub exploration: Exploration,
    pub eval_epsilon: f64,
    pub mode: AgentMode,
    /// Frames concatenated into one network input; the environment applies it.
    pub frame_stack: usize,
}

impl AgentConfig {
    /// Defaults around `network`; the mode follows the network's core.
    pub fn new(network: NetworkSpec) -> Self {
        let mode = match network.core {
            CoreKind::Lstm => AgentMode::Recurrent,
            CoreKind::Dense => AgentMode::Feedforward,
        };
        AgentConfig {
            network,
            returns: ReturnSpec::default(),
            optimizer: OptimizerConfig::default(),
            replay: ReplayConfig::default(),
            target_sync_interval: 10_000,
            exploration: Exploration::default(),
            eval_epsilon: 0.05,
            mode,
            frame_stack: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.returns.validate()?;
        if self.returns.gamma >= 1.0 {
            return Err(Error::Config(format!("gamma must be < 1, got {}", self.returns.gamma)));
        }
        self.optimizer.validate()?;
        self.replay.validate()?;
        if self.target_sync_interval == 0 {
            return Err(Error::Config("target_sync_interval must be >= 1".into()));
        }
        let Exploration { start, end, .. } = self.exploration;
        for (name, eps) in [("start", start), ("end", end), ("eval", self.eval_epsilon)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("epsilon {name} must be in [0, 1], got {eps}")));
            }
        }
        let expected = match self.mode {
            AgentMode::Recurrent => CoreKind::Lstm,
            AgentMode::Feedforward => CoreKind::Dense,
        };
        if self.network.core != expected {
            return Err(Error::Config(format!(
                "{:?} mode needs a {:?} core, network has {:?}",
                self.mode, expected, self.network.core
            )));
        }
        if self.frame_stack == 0 {
            return Err(Error::Config("frame_stack must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn training_epsilon(config: &AgentConfig, step: u64) -> f64 {
    let Exploration {
        start,
        end,
        decay_steps,
    } = config.exploration;
    if step >= decay_steps {
        return end;
    }
    start + (end - start) * (step as f64 / decay_steps as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `dL/dQ` for the mean squared error over `count` pairs, non-zero only at
/// the chosen actions.
pub fn chosen_action_gradient(q: &Tensor, actions: &[usize], targets: &[f64], count: usize) -> Tensor {
    let mut grad = Tensor::zeros(q.shape());
    let cols = q.shape()[1];
    for (t, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        grad.data_mut()[t * cols + a] = 2.0 * (q.row(t)[a] - y) / count as f64;
    }
    grad
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_return: f64,
    pub episodes: u64,
    pub frames: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    config: AgentConfig,
    online: ParameterSet,
    target: ParameterSet,
    optimizer: Optimizer,
    step: u64,
    hidden: LstmState,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = init_parameters(&config.network, seed)?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &online)?;
        Ok(Agent {
            hidden: LstmState::zeros(config.network.hidden_width),
            target: online.clone(),
            online,
            optimizer,
            step: 0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &ParameterSet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut ParameterSet {
        &mut self.online
    }

    pub fn target(&self) -> &ParameterSet {
        &self.target
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    /// Completed train steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn hidden(&self) -> &LstmState {
        &self.hidden
    }

    pub fn set_hidden(&mut self, hidden: LstmState) -> Result<()> {
        if hidden.width() != self.config.network.hidden_width {
            return Err(Error::shape("hidden state width does not match the network"));
        }
        self.hidden = hidden;
        Ok(())
    }

    /// Zeroes the acting hidden state; call at every episode start.
    pub fn reset_hidden(&mut self) {
        self.hidden = LstmState::zeros(self.config.network.hidden_width);
    }

    pub fn training_epsilon(&self) -> f64 {
        training_epsilon(&self.config, self.step)
    }

    /// ε-greedy action; the hidden state advances whichever way it is chosen.
    pub fn act<R: Rng + ?Sized>(&mut self, observation: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        let (action, hidden) = policy_step(
            &self.online,
            &self.config.network,
            observation,
            &self.hidden,
            epsilon,
            rng,
        )?;
        self.hidden = hidden;
        Ok(action)
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    /// Max target-network Q at each successor state of the training portion.
    pub fn bootstrap_values(&self, sample: &SubTrajectory<'_>) -> Result<Vec<f64>> {
        let spec = &self.config.network;
        let zero = LstmState::zeros(spec.hidden_width);
        let b = sample.burn_in_count;
        let train = sample.train();
        let next = train.iter().map(|t| t.next_observation.as_slice());
        let (inputs, offset): (Vec<&[f64]>, usize) = match self.config.mode {
            AgentMode::Recurrent => {
                // s_0 .. s_b followed by the successors of the training steps
                let mut seq: Vec<&[f64]> = sample.transitions[..=b]
                    .iter()
                    .map(|t| t.observation.as_slice())
                    .collect();
                seq.extend(next);
                (seq, b + 1)
            }
            AgentMode::Feedforward => (next.collect(), 0),
        };
        let (q, _) = infer_sequence(&self.target, spec, &inputs, &zero)?;
        Ok((0..train.len())
            .map(|j| q.row(offset + j).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Mean loss and its gradient with respect to the online parameters.
    pub fn compute_gradients(&self, batch: &[SubTrajectory<'_>]) -> Result<(f64, GradientSet)> {
        let spec = &self.config.network;
        let zero = LstmState::zeros(spec.hidden_width);
        let count: usize = batch.iter().map(|s| s.train().len()).sum();
        if count == 0 {
            return Err(Error::Replay("batch has no training steps".into()));
        }
        let mut grads = GradientSet::zeros_like(&self.online);
        let mut loss = 0.0;
        for sample in batch {
            let b = sample.burn_in_count;
            let train = sample.train();
            let start = match self.config.mode {
                AgentMode::Recurrent if b > 0 => {
                    let warm: Vec<&[f64]> = sample.burn_in().iter().map(|t| t.observation.as_slice()).collect();
                    infer_sequence(&self.online, spec, &warm, &zero)?.1
                }
                _ => zero.clone(),
            };
            let inputs: Vec<&[f64]> = train.iter().map(|t| t.observation.as_slice()).collect();
            let (q, _, tape) = forward_sequence(&self.online, spec, &inputs, &start)?;
            let actions: Vec<usize> = train.iter().map(|t| t.action).collect();
            if let Some(&a) = actions.iter().find(|&&a| a >= spec.action_count) {
                return Err(Error::Replay(format!("stored action {a} out of range")));
            }
            let greedy = (0..train.len()).map(|j| greedy_action(q.row(j)) == actions[j]).collect();
            let view = TrajectoryView::new(
                train.iter().map(|t| t.reward).collect(),
                train.iter().map(|t| t.terminal).collect(),
                self.bootstrap_values(sample)?,
                greedy,
            )?;
            let targets = truncated_lambda_targets(&view, &self.config.returns)?;
            loss += actions
                .iter()
                .zip(targets.iter())
                .enumerate()
                .map(|(j, (&a, &y))| (q.row(j)[a] - y).powi(2))
                .sum::<f64>();
            let dq = chosen_action_gradient(&q, &actions, &targets, count);
            // The initial-state gradient is dropped: nothing flows into burn-in.
            let (g, _) = backward_sequence(&tape, &dq)?;
            grads.accumulate(&g)?;
        }
        Ok((loss / count as f64, grads))
    }

    /// One optimizer step, then the step count and periodic target sync.
    pub fn apply_gradients(&mut self, grads: &GradientSet) -> Result<()> {
        self.optimizer.step(&mut self.online, grads)?;
        if !self.online.is_finite() {
            return Err(Error::NonFinite("optimizer step"));
        }
        self.step += 1;
        if self.step % self.config.target_sync_interval == 0 {
            self.sync_target();
        }
        Ok(())
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<f64> {
        let batch = buffer.sample(rng)?;
        let (loss, grads) = self.compute_gradients(&batch)?;
        self.apply_gradients(&grads)?;
        Ok(loss)
    }

    /// Whole episodes at `eval_epsilon` from a zero hidden state each, until
    /// at least `frame_budget` frames; the last episode is always finished.
    pub fn evaluate<E: Environment + ?Sized>(&self, env: &mut E, frame_budget: u64, seed: u64) -> Result<Evaluation> {
        if frame_budget == 0 {
            return Err(Error::invalid("frame_budget must be >= 1"));
        }
        let spec = &self.config.network;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut frames, mut episodes, mut total) = (0u64, 0u64, 0.0);
        while frames < frame_budget {
            let mut obs = env.reset(rng.r#gen());
            let mut hidden = LstmState::zeros(spec.hidden_width);
            loop {
                let (action, next) =
                    policy_step(&self.online, spec, &obs, &hidden, self.config.eval_epsilon, &mut rng)?;
                hidden = next;
                let step = env.step(action)?;
                frames += 1;
                total += step.reward;
                obs = step.observation;
                if step.terminal {
                    break;
                }
            }
            episodes += 1;
        }
        Ok(Evaluation {
            mean_return: total / episodes as f64,
            episodes,
            frames,
        })
    }

    pub fn to_checkpoint(&self, rng: &ChaCha8Rng) -> Checkpoint {
        Checkpoint {
            online: self.online.clone(),
            target: self.target.clone(),
            optimizer: self.optimizer.state.clone(),
            step: self.step,
            rng: rng.clone(),
            resume: None,
        }
    }

    /// Rebuilds an agent around checkpointed parameters; the acting hidden
    /// state starts at zero.
    pub fn from_checkpoint(config: AgentConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut agent = Agent::new(config, 0)?;
        agent.online.check_congruent(&checkpoint.online)?;
        agent.online.check_congruent(&checkpoint.target)?;
        agent.online.clone_from(&checkpoint.online);
        agent.target.clone_from(&checkpoint.target);
        agent.optimizer.state = checkpoint.optimizer.clone();
        agent.step = checkpoint.step;
        Ok(agent)
    }
}

fn policy_step<R: Rng + ?Sized>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observation: &[f64],
    hidden: &LstmState,
    epsilon: f64,
    rng: &mut R,
) -> Result<(usize, LstmState)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    let (q, next) = infer_sequence(params, spec, &[observation], hidden)?;
    let explore = rng.gen_range(0.0..1.0) < epsilon;
    let action = if explore {
        rng.gen_range(0..spec.action_count)
    } else {
        greedy_action(q.row(0))
    };
    Ok((action, next))
}
