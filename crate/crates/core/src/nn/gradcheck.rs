use crate::error::{Error, Result};
use crate::nn::{
    backward_sequence, forward_sequence, infer_sequence, CoreKind, GradientSet, LstmState, NetworkSpec, ParameterSet, Tape,
    Tensor,
};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Scalar with the largest error, e.g. `lstm.bias[5]` or `initial.cell[0]`.
    pub worst: String,
    pub checked: usize,
}

/// `Σ dloss_dq ⊙ Q` for the given parameters and initial state.
fn probe_loss<O: AsRef<[f64]>>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observations: &[O],
    initial: &LstmState,
    dloss_dq: &Tensor,
) -> Result<f64> {
    let (q, _) = infer_sequence(params, spec, observations, initial)?;
    Ok(q.data().iter().zip(dloss_dq.data()).map(|(a, b)| a * b).sum())
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error over all parameters, zero initial state.
pub fn finite_difference_check<O: AsRef<[f64]>>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observations: &[O],
    dloss_dq: &Tensor,
    h: f64,
) -> Result<f64> {
    let initial = LstmState::zeros(spec.hidden_width);
    gradient_check(params, spec, observations, &initial, dloss_dq, h)
        .map(|r| r.max_relative_error)
}

/// Full check over parameters and (for an LSTM core) the initial state.
pub fn gradient_check<O: AsRef<[f64]>>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observations: &[O],
    initial: &LstmState,
    dloss_dq: &Tensor,
    h: f64,
) -> Result<GradCheckReport> {
    gradient_check_with(params, spec, observations, initial, dloss_dq, h, backward_sequence)
}

/// As [`gradient_check`], with the analytic backward pass supplied by the caller.
pub fn gradient_check_with<O, B>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observations: &[O],
    initial: &LstmState,
    dloss_dq: &Tensor,
    h: f64,
    backward: B,
) -> Result<GradCheckReport>
where
    O: AsRef<[f64]>,
    B: Fn(&Tape<'_>, &Tensor) -> Result<(GradientSet, LstmState)>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let (_, _, tape) = forward_sequence(params, spec, observations, initial)?;
    let (grads, dinitial) = backward(&tape, dloss_dq)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, analytic: f64, numeric: f64| {
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_empty() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = name;
        }
    };

    let mut probe = params.clone();
    for (index, (name, tensor)) in params.iter().enumerate() {
        for k in 0..tensor.len() {
            let orig = tensor.data()[k];
            probe.tensor_mut(index).data_mut()[k] = orig + h;
            let plus = probe_loss(&probe, spec, observations, initial, dloss_dq)?;
            probe.tensor_mut(index).data_mut()[k] = orig - h;
            let minus = probe_loss(&probe, spec, observations, initial, dloss_dq)?;
            probe.tensor_mut(index).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            record(format!("{name}[{k}]"), grads.tensor(index).data()[k], numeric);
        }
    }

    if spec.core == CoreKind::Lstm {
        for (part, analytic) in [("hidden", &dinitial.hidden), ("cell", &dinitial.cell)] {
            for k in 0..analytic.len() {
                let shifted = |delta: f64| {
                    let mut s = initial.clone();
                    let t = if part == "hidden" { &mut s.hidden } else { &mut s.cell };
                    t.data_mut()[k] += delta;
                    s
                };
                let plus = probe_loss(params, spec, observations, &shifted(h), dloss_dq)?;
                let minus = probe_loss(params, spec, observations, &shifted(-h), dloss_dq)?;
                record(
                    format!("initial.{part}[{k}]"),
                    analytic.data()[k],
                    (plus - minus) / (2.0 * h),
                );
            }
        }
    }
    Ok(report)
}
