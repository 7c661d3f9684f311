//! Command-line workflows: training runs, evaluation of checkpoints, and the
//! gradient and return-oracle self-checks.

mod config;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{
    backward_sequence, gradient_check_with, init_parameters, GradCheckReport, GradientSet, LstmState, NetworkSpec,
    Tape, Tensor,
};
use crate::returns::{brute_force_targets, truncated_lambda_targets, ReturnSpec, TrajectoryView};

pub use config::{parse_config, RunConfig};
pub use train::{run_train, MetricsRow, RunOutput, Trainer, CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::InvalidArgument(_) | Error::Corrupt { .. } => EXIT_USAGE,
        _ => EXIT_CHECK_FAILED,
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// One evaluation pass of a saved agent.
pub fn run_eval(checkpoint: &Path, config: &RunConfig, frames: u64, seed: u64) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", checkpoint.display())),
        other => other,
    })?;
    let agent = Agent::from_checkpoint(config.agent.clone(), &ck).map_err(|e| Error::Corrupt {
        path: checkpoint.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut env = config.env.build()?;
    Ok(agent.evaluate(&mut env, frames, seed)?.mean_return)
}

/// Networks exercised by [`run_gradcheck`]: every layer kind, two feature
/// layers, and a five-step sequence.
pub fn gradcheck_networks() -> Vec<NetworkSpec> {
    vec![
        NetworkSpec::recurrent(4, vec![6, 5], 5, 3),
        NetworkSpec::recurrent(3, Vec::new(), 4, 2),
        NetworkSpec::feedforward(4, vec![6, 5], 5, 3),
    ]
}

/// Central-difference check of BPTT; `corrupt_backward` perturbs one
/// analytic gradient to prove the check can fail.
pub fn run_gradcheck(seed: u64, corrupt_backward: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (n, spec) in gradcheck_networks().into_iter().enumerate() {
        let params = init_parameters(&spec, rng.r#gen())?;
        let steps = 5;
        let obs: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let dq = Tensor::from_vec(
            vec![steps, spec.action_count],
            (0..steps * spec.action_count).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let mut initial = LstmState::zeros(spec.hidden_width);
        initial.hidden.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        initial.cell.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        let backward = |tape: &Tape<'_>, dq: &Tensor| -> Result<(GradientSet, LstmState)> {
            let (mut g, d) = backward_sequence(tape, dq)?;
            if corrupt_backward {
                g.tensor_mut(0).data_mut()[0] += 1e-3;
            }
            Ok((g, d))
        };
        let report = gradient_check_with(&params, &spec, &obs, &initial, &dq, 1e-5, backward)?;
        worst.checked += report.checked;
        if report.max_relative_error >= worst.max_relative_error {
            worst.max_relative_error = report.max_relative_error;
            worst.worst = format!("network {n}: {}", report.worst);
        }
    }
    Ok(worst)
}

/// Random trajectory views with random terminals and greedy flags, paired
/// with return settings using λ ∈ {0, 0.3, 0.8, 1} and no cutoff.
pub fn oracle_corpus(trials: usize, seed: u64) -> Result<Vec<(TrajectoryView, ReturnSpec)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let k = rng.gen_range(1..=22);
            let rewards = (0..k).map(|_| [-1.0, 0.0, 0.0, 1.0][rng.gen_range(0..4)]).collect();
            let mut terminals = vec![false; k];
            terminals[k - 1] = rng.gen_bool(0.3);
            let boot = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let greedy = (0..k).map(|_| rng.gen_bool(0.8)).collect();
            let lambda = [0.0, 0.3, 0.8, 1.0][rng.gen_range(0..4)];
            let gamma = rng.gen_range(0.0..0.999);
            Ok((
                TrajectoryView::new(rewards, terminals, boot, greedy)?,
                ReturnSpec::new(gamma, lambda, 0.0)?,
            ))
        })
        .collect()
}

pub struct OracleOutcome {
    pub trials: usize,
    pub max_abs_diff: f64,
    /// Text dump of the first case over tolerance.
    pub failure: Option<String>,
}

pub const ORACLE_TOLERANCE: f64 = 1e-12;

pub fn run_oracle_check(trials: usize, seed: u64) -> Result<OracleOutcome> {
    let mut outcome = OracleOutcome {
        trials,
        max_abs_diff: 0.0,
        failure: None,
    };
    for (i, (view, spec)) in oracle_corpus(trials, seed)?.into_iter().enumerate() {
        let fast = truncated_lambda_targets(&view, &spec)?;
        let slow = brute_force_targets(&view, &spec)?;
        let diff = fast.iter().zip(slow.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        outcome.max_abs_diff = outcome.max_abs_diff.max(diff);
        if !(diff < ORACLE_TOLERANCE) && outcome.failure.is_none() {
            outcome.failure = Some(format!(
                "trial {i}: gamma={} lambda={}\nrewards={:?}\nterminals={:?}\nbootstrap={:?}\ngreedy={:?}\ntruncated={:?}\nbrute_force={:?}\nmax_abs_diff={diff:e}",
                spec.gamma,
                spec.lambda,
                view.rewards(),
                view.terminals(),
                view.bootstrap_values(),
                view.greedy_flags(),
                &*fast,
                &*slow,
            ));
        }
    }
    Ok(outcome)
}
