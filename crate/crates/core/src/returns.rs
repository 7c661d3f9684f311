//! Return and target arithmetic for forward-view Watkins Q(λ).
//!
//! Targets for a sampled window of `k` training steps are normalized
//! weighted averages of n-step returns. The weight of the n-step return
//! from step `l` is `∏_{i=l+1}^{l+n−1} λ_i`, where `λ_i` is `λ` when the
//! stored action at step `i` was greedy under the online network and 0
//! otherwise. The 1-step return always has weight 1, so a non-greedy action
//! at `l` itself never makes the normalization degenerate; whenever `λ_l ≠ 0`
//! the common factor cancels and the result is the same.
//!
//! Returns never sum rewards past a terminal step, and any n-step return that
//! reaches a terminal step drops its bootstrap term.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnSpec {
    pub gamma: f64,
    pub lambda: f64,
    /// Product weights below this are dropped. Zero disables the cutoff.
    pub cutoff_threshold: f64,
}

impl Default for ReturnSpec {
    fn default() -> Self {
        ReturnSpec {
            gamma: 0.99,
            lambda: 0.8,
            cutoff_threshold: 0.01,
        }
    }
}

impl ReturnSpec {
    pub fn new(gamma: f64, lambda: f64, cutoff_threshold: f64) -> Result<Self> {
        let spec = ReturnSpec {
            gamma,
            lambda,
            cutoff_threshold,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        // γ = 1 is allowed here: every return is a finite window sum.
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.cutoff_threshold) {
            return Err(Error::invalid(format!(
                "cutoff threshold must lie in [0, 1], got {}",
                self.cutoff_threshold
            )));
        }
        Ok(())
    }
}

/// Per-step data for one sampled window of training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryView {
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    /// `max_a Q(s_{t+1}, a | θ⁻)` for each step.
    bootstrap_values: Vec<f64>,
    /// Whether the stored action matched the online-network argmax.
    greedy_flags: Vec<bool>,
}

impl TrajectoryView {
    pub fn new(
        rewards: Vec<f64>,
        terminals: Vec<bool>,
        bootstrap_values: Vec<f64>,
        greedy_flags: Vec<bool>,
    ) -> Result<Self> {
        let k = rewards.len();
        if k == 0 {
            return Err(Error::invalid("trajectory view must hold at least one step"));
        }
        if terminals.len() != k || bootstrap_values.len() != k || greedy_flags.len() != k {
            return Err(Error::shape(format!(
                "view fields disagree in length: rewards {k}, terminals {}, bootstrap {}, greedy {}",
                terminals.len(),
                bootstrap_values.len(),
                greedy_flags.len()
            )));
        }
        if terminals[..k - 1].iter().any(|&t| t) {
            return Err(Error::invalid("only the last step of a view may be terminal"));
        }
        if rewards.iter().chain(&bootstrap_values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("TrajectoryView::new"));
        }
        Ok(TrajectoryView {
            rewards,
            terminals,
            bootstrap_values,
            greedy_flags,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn terminals(&self) -> &[bool] {
        &self.terminals
    }

    pub fn bootstrap_values(&self) -> &[f64] {
        &self.bootstrap_values
    }

    pub fn greedy_flags(&self) -> &[bool] {
        &self.greedy_flags
    }

    /// Longest n-step return available from step `l`.
    pub fn max_steps_from(&self, l: usize) -> usize {
        self.len() - l
    }
}

/// Per-step trace factors: `λ` on greedy steps, 0 otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct CutVector(Vec<f64>);

impl Deref for CutVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One λ-return target per training step.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for TargetVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// How many product weights survive the cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Unbounded,
}

/// Discounted sum of a complete trajectory's rewards.
pub fn mc_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut acc = 0.0;
    for r in rewards {
        acc += disc * r;
        disc *= gamma;
    }
    acc
}

pub fn td_error(reward: f64, gamma: f64, v_next: f64, v_curr: f64) -> f64 {
    reward + gamma * v_next - v_curr
}

/// Q-learning target against the frozen network's best next value.
pub fn one_step_target(reward: f64, gamma: f64, terminal: bool, max_q_next: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_q_next
    }
}

/// `Σ_{i<n} γⁱ r_{l+i} + γⁿ V(s_{l+n})`, truncated at a terminal step.
pub fn n_step_return(view: &TrajectoryView, start: usize, n: usize, gamma: f64) -> Result<f64> {
    if start >= view.len() {
        return Err(Error::invalid(format!(
            "start {start} outside view of length {}",
            view.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n-step return needs n >= 1"));
    }
    let mut acc = 0.0;
    let mut disc = 1.0;
    for idx in start..start + n {
        if idx >= view.len() {
            return Err(Error::invalid(format!(
                "{n}-step return from {start} runs past a non-terminal view of length {}",
                view.len()
            )));
        }
        acc += disc * view.rewards[idx];
        disc *= gamma;
        if view.terminals[idx] {
            return Ok(acc);
        }
    }
    Ok(acc + disc * view.bootstrap_values[start + n - 1])
}

/// Geometric λ-mixture of n-step returns up to `horizon`, with the residual
/// weight `λ^N` placed on the longest return so the weights sum to one.
pub fn lambda_return_geometric(
    view: &TrajectoryView,
    start: usize,
    gamma: f64,
    lambda: f64,
    horizon: usize,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let mut mix = 0.0;
    let mut weight = 1.0;
    for n in 1..=horizon {
        mix += weight * n_step_return(view, start, n, gamma)?;
        weight *= lambda;
    }
    let longest = n_step_return(view, start, horizon, gamma)?;
    Ok((1.0 - lambda) * mix + weight * longest)
}

pub fn compute_cuts(greedy_flags: &[bool], lambda: f64) -> CutVector {
    CutVector(
        greedy_flags
            .iter()
            .map(|&g| if g { lambda } else { 0.0 })
            .collect(),
    )
}

/// Largest `n ≥ 1` with `λⁿ ≥ threshold`, or 0 when even `λ` falls short.
///
/// The trace then reaches `n + 1` states counting the 1-step return.
pub fn effective_horizon(lambda: f64, threshold: f64) -> Result<Horizon> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if lambda == 1.0 {
        return Ok(Horizon::Unbounded);
    }
    let mut n = 0;
    let mut weight = lambda;
    while weight >= threshold {
        n += 1;
        weight *= lambda;
    }
    Ok(Horizon::Finite(n))
}

/// Normalized, cut and cutoff-truncated λ-return targets for every step.
pub fn truncated_lambda_targets(view: &TrajectoryView, spec: &ReturnSpec) -> Result<TargetVector> {
    spec.validate()?;
    let cuts = compute_cuts(&view.greedy_flags, spec.lambda);
    let k = view.len();
    let mut targets = Vec::with_capacity(k);
    for l in 0..k {
        let mut weighted = 0.0;
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut acc = 0.0;
        let mut disc = 1.0;
        for idx in l..k {
            if idx > l {
                weight *= cuts[idx];
                if weight == 0.0 || weight < spec.cutoff_threshold {
                    break;
                }
            }
            acc += disc * view.rewards[idx];
            disc *= spec.gamma;
            let terminal = view.terminals[idx];
            let ret = if terminal {
                acc
            } else {
                acc + disc * view.bootstrap_values[idx]
            };
            weighted += weight * ret;
            total += weight;
            if terminal {
                break;
            }
        }
        targets.push(weighted / total);
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("truncated_lambda_targets"));
    }
    Ok(TargetVector(targets))
}

/// Direct nested-loop evaluation of the weighted sum, no cutoff.
///
/// Kept deliberately naive as an independent check on
/// [`truncated_lambda_targets`]: every n-step return and every product is
/// recomputed from scratch, and when `λ_l ≠ 0` the product includes `λ_l`
/// itself so the cancellation in the normalization is exercised too.
pub fn brute_force_targets(view: &TrajectoryView, spec: &ReturnSpec) -> Result<TargetVector> {
    spec.validate()?;
    let k = view.len();
    let lam = |i: usize| if view.greedy_flags[i] { spec.lambda } else { 0.0 };
    let mut targets = Vec::with_capacity(k);
    for l in 0..k {
        let lead = if lam(l) != 0.0 { lam(l) } else { 1.0 };
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for s in l..k {
            let mut product = lead;
            for i in l + 1..=s {
                product *= lam(i);
            }
            let n = s - l + 1;
            let mut ret = 0.0;
            for j in 0..n {
                ret += spec.gamma.powi(j as i32) * view.rewards[l + j];
            }
            if !view.terminals[s] {
                ret += spec.gamma.powi(n as i32) * view.bootstrap_values[s];
            }
            numerator += product * ret;
            denominator += product;
        }
        targets.push(numerator / denominator);
    }
    Ok(TargetVector(targets))
}
