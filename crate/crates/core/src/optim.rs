//! First-order update rules: SGD, the Graves RMSprop variant, and Adam.
//!
//! Every rule is a descent step on the supplied loss gradient. The Adam
//! epsilon sits inside the square root: `θ ← θ − α·m̂/√(v̂ + ε)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    RmspropGraves,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop_graves" | "rmsprop" => Ok(OptimizerKind::RmspropGraves),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global-norm gradient clipping; off unless set.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.00025,
            rmsprop_decay: 0.95,
            rmsprop_epsilon: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 0.001,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn rmsprop_graves(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmspropGraves,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        unit("rmsprop decay", self.rmsprop_decay)?;
        unit("adam beta1", self.adam_beta1)?;
        unit("adam beta2", self.adam_beta2)?;
        for (name, eps) in [
            ("rmsprop epsilon", self.rmsprop_epsilon),
            ("adam epsilon", self.adam_epsilon),
        ] {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {eps}")));
            }
        }
        if let Some(c) = self.clip_norm
            && !(c > 0.0 && c.is_finite())
        {
            return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
        }
        Ok(())
    }
}

/// Running moments, one tensor per parameter for each of `m`, `g`, `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// First moment (RMSprop and Adam).
    pub m: ParameterSet,
    /// RMSprop mean square.
    pub g: ParameterSet,
    /// Adam second moment.
    pub v: ParameterSet,
    /// Completed steps.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            g: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// All moments as one set, names suffixed `.m`, `.g`, `.v`.
    pub fn to_entries(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (suffix, set) in [(".m", &self.m), (".g", &self.g), (".v", &self.v)] {
            for (name, t) in set.with_suffix(suffix).iter() {
                out.push(name, t.clone()).expect("suffixed names are unique");
            }
        }
        out
    }

    /// Inverse of [`to_entries`](Self::to_entries), checked against `params`.
    pub fn from_entries(params: &ParameterSet, entries: &ParameterSet, t: u64) -> Result<Self> {
        let mut state = OptimizerState::new(params);
        state.t = t;
        for (suffix, set) in [(".m", &mut state.m), (".g", &mut state.g), (".v", &mut state.v)] {
            let names: Vec<String> = set.names().map(str::to_owned).collect();
            for name in names {
                let key = format!("{name}{suffix}");
                let src = entries
                    .get(&key)
                    .ok_or_else(|| Error::Parameters(format!("missing optimizer entry {key}")))?;
                let dst = set.get_mut(&name).expect("name from same set");
                if dst.shape() != src.shape() {
                    return Err(Error::Parameters(format!("optimizer entry {key} has wrong shape")));
                }
                dst.data_mut().copy_from_slice(src.data());
            }
        }
        if entries.len() != 3 * params.len() {
            return Err(Error::Parameters("unexpected extra optimizer entries".into()));
        }
        Ok(state)
    }

    fn check(&self, params: &ParameterSet) -> Result<()> {
        self.m.check_congruent(params)?;
        self.g.check_congruent(params)?;
        self.v.check_congruent(params)
    }
}

/// `θ ← θ − α·∇θ`.
pub fn sgd_step(params: &mut ParameterSet, grads: &GradientSet, config: &OptimizerConfig) -> Result<()> {
    params.check_congruent(grads)?;
    let lr = config.learning_rate;
    for (i, (_, g)) in grads.iter().enumerate() {
        let p = params.tensor_mut(i);
        p.data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(w, d)| *w -= lr * d);
    }
    Ok(())
}

/// Graves RMSprop: divides by the running standard deviation.
///
/// `m ← βm + (1−β)∇`, `g ← βg + (1−β)∇²`, `θ ← θ − α·∇/√(g − m² + ε)`.
pub fn rmsprop_graves_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    params.check_congruent(grads)?;
    state.check(params)?;
    let (lr, beta, eps) = (config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon);
    state.t += 1;
    for (i, (name, grad)) in grads.iter().enumerate() {
        let m = state.m.tensor_mut(i).data_mut();
        let g = state.g.tensor_mut(i).data_mut();
        let p = params.tensor_mut(i).data_mut();
        for (k, &d) in grad.data().iter().enumerate() {
            m[k] = beta * m[k] + (1.0 - beta) * d;
            g[k] = beta * g[k] + (1.0 - beta) * d * d;
            let var = g[k] - m[k] * m[k] + eps;
            if var <= 0.0 {
                return Err(Error::invalid(format!(
                    "rmsprop variance estimate non-positive at {name}[{k}]"
                )));
            }
            p[k] -= lr * d / var.sqrt();
        }
    }
    Ok(())
}

/// Adam with bias correction and epsilon inside the square root.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    params.check_congruent(grads)?;
    state.check(params)?;
    let (lr, b1, b2, eps) = (
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (_, grad)) in grads.iter().enumerate() {
        let m = state.m.tensor_mut(i).data_mut();
        let v = state.v.tensor_mut(i).data_mut();
        let p = params.tensor_mut(i).data_mut();
        for (k, &d) in grad.data().iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * d;
            v[k] = b2 * v[k] + (1.0 - b2) * d * d;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat + eps).sqrt();
        }
    }
    Ok(())
}

/// Config plus owned state; dispatches on the configured rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParameterSet) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState::new(params),
        })
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet) -> Result<()> {
        let clipped;
        let grads = match self.config.clip_norm {
            Some(limit) if grads.global_norm() > limit => {
                let mut g = grads.clone();
                g.scale(limit / grads.global_norm());
                clipped = g;
                &clipped
            }
            _ => grads,
        };
        match self.config.kind {
            OptimizerKind::Sgd => {
                sgd_step(params, grads, &self.config)?;
                self.state.t += 1;
                Ok(())
            }
            OptimizerKind::RmspropGraves => {
                rmsprop_graves_step(params, grads, &mut self.state, &self.config)
            }
            OptimizerKind::Adam => adam_step(params, grads, &mut self.state, &self.config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push("w", Tensor::vector(vec![v])).unwrap();
        p
    }

    fn grad(v: f64) -> GradientSet {
        let mut g = GradientSet::zeros_like(&scalar(0.0));
        g.tensor_mut(0).data_mut()[0] = v;
        g
    }

    fn value(p: &ParameterSet) -> f64 {
        p.tensor(0).data()[0]
    }

    #[test]
    fn sgd_definition() {
        let mut p = scalar(1.0);
        sgd_step(&mut p, &grad(2.0), &OptimizerConfig::sgd(0.1)).unwrap();
        assert!((value(&p) - 0.8).abs() < 1e-15);
        sgd_step(&mut p, &grad(0.0), &OptimizerConfig::sgd(0.1)).unwrap();
        assert!((value(&p) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_equal_one_doubled() {
        let mut a = scalar(0.5);
        let mut b = scalar(0.5);
        sgd_step(&mut a, &grad(0.25), &OptimizerConfig::sgd(0.125)).unwrap();
        sgd_step(&mut a, &grad(0.25), &OptimizerConfig::sgd(0.125)).unwrap();
        sgd_step(&mut b, &grad(0.25), &OptimizerConfig::sgd(0.25)).unwrap();
        assert_eq!(value(&a), value(&b));
    }

    #[test]
    fn rmsprop_constant_gradient_fixed_point() {
        let cfg = OptimizerConfig::rmsprop_graves(0.00025);
        let c = 0.3;
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = value(&p);
            rmsprop_graves_step(&mut p, &grad(c), &mut s, &cfg).unwrap();
            last = before - value(&p);
        }
        let expected = 0.00025 * c / 0.01f64.sqrt();
        assert!((last - expected).abs() < 1e-12, "{last} vs {expected}");
    }

    #[test]
    fn adam_epsilon_sits_inside_the_root() {
        let cfg = OptimizerConfig::adam(1.0);
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
        assert_eq!(value(&p), -1.0 / 1.001f64.sqrt());
        assert_eq!(s.t, 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = scalar(0.0);
        let mut other = ParameterSet::new();
        other.push("w", Tensor::vector(vec![0.0, 1.0])).unwrap();
        let g = GradientSet::zeros_like(&other);
        let mut s = OptimizerState::new(&p);
        assert!(sgd_step(&mut p, &g, &OptimizerConfig::sgd(0.1)).is_err());
        assert!(adam_step(&mut p, &g, &mut s, &OptimizerConfig::adam(0.1)).is_err());
        assert!(rmsprop_graves_step(&mut p, &g, &mut s, &OptimizerConfig::rmsprop_graves(0.1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::adam(0.0).validate().is_err());
        let bad = OptimizerConfig {
            adam_beta2: 1.0,
            ..OptimizerConfig::adam(0.1)
        };
        assert!(bad.validate().is_err());
        assert!(OptimizerConfig::rmsprop_graves(0.1).validate().is_ok());
        assert_eq!("rmsprop_graves".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmspropGraves);
        assert!("nesterov".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn clipping_rescales_large_gradients() {
        let cfg = OptimizerConfig {
            clip_norm: Some(1.0),
            ..OptimizerConfig::sgd(1.0)
        };
        let mut opt = Optimizer::new(cfg, &scalar(0.0)).unwrap();
        let mut p = scalar(0.0);
        opt.step(&mut p, &grad(10.0)).unwrap();
        assert!((value(&p) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn state_entries_roundtrip() {
        let p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        let mut q = p.clone();
        adam_step(&mut q, &grad(0.7), &mut s, &OptimizerConfig::adam(0.1)).unwrap();
        rmsprop_graves_step(&mut q, &grad(0.2), &mut s, &OptimizerConfig::rmsprop_graves(0.1)).unwrap();
        let entries = s.to_entries();
        assert_eq!(entries.names().collect::<Vec<_>>(), ["w.m", "w.g", "w.v"]);
        assert_eq!(OptimizerState::from_entries(&p, &entries, s.t).unwrap(), s);
    }
}
