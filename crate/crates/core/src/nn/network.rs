use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, ParameterSet, Tensor};

/// The layer sitting between the feature stack and the Q-value head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreKind {
    /// Four-gate LSTM without peepholes; carries state across steps.
    Lstm,
    /// Dense layer with ReLU; stateless, used by the feedforward baseline.
    Dense,
}

/// Topology: dense+ReLU feature stack → core → linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub feature_widths: Vec<usize>,
    pub core: CoreKind,
    pub hidden_width: usize,
    pub action_count: usize,
}

impl NetworkSpec {
    pub fn recurrent(
        input_dim: usize,
        feature_widths: Vec<usize>,
        hidden_width: usize,
        action_count: usize,
    ) -> Self {
        NetworkSpec {
            input_dim,
            feature_widths,
            core: CoreKind::Lstm,
            hidden_width,
            action_count,
        }
    }

    pub fn feedforward(
        input_dim: usize,
        feature_widths: Vec<usize>,
        hidden_width: usize,
        action_count: usize,
    ) -> Self {
        NetworkSpec {
            core: CoreKind::Dense,
            ..Self::recurrent(input_dim, feature_widths, hidden_width, action_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_width == 0
            || self.action_count == 0
            || self.feature_widths.contains(&0)
        {
            return Err(Error::invalid(format!("all network dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn core_input(&self) -> usize {
        self.feature_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &w) in self.feature_widths.iter().enumerate() {
            out.push((format!("feature.{i}.weight"), vec![w, fan_in]));
            out.push((format!("feature.{i}.bias"), vec![w]));
            fan_in = w;
        }
        let h = self.hidden_width;
        match self.core {
            CoreKind::Lstm => {
                out.push(("lstm.input_weight".into(), vec![4 * h, fan_in]));
                out.push(("lstm.recurrent_weight".into(), vec![4 * h, h]));
                out.push(("lstm.bias".into(), vec![4 * h]));
            }
            CoreKind::Dense => {
                out.push(("core.weight".into(), vec![h, fan_in]));
                out.push(("core.bias".into(), vec![h]));
            }
        }
        out.push(("head.weight".into(), vec![self.action_count, h]));
        out.push(("head.bias".into(), vec![self.action_count]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Hidden and cell vectors of the LSTM core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(width: usize) -> Self {
        LstmState {
            hidden: Tensor::zeros(&[width]),
            cell: Tensor::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.hidden.len()
    }
}

/// LSTM gate blocks, in storage order within `lstm.*` rows.
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CANDIDATE: usize = 2;
const GATE_OUTPUT: usize = 3;

/// Deterministic initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
/// biases zero except the LSTM forget gate, which starts at 1.
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    for (name, shape) in spec.layout() {
        let mut t = Tensor::zeros(&shape);
        if shape.len() == 2 {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..=bound));
        } else if name == "lstm.bias" {
            let h = spec.hidden_width;
            t.data_mut()[GATE_FORGET * h..(GATE_FORGET + 1) * h].fill(1.0);
        }
        params.push(name, t)?;
    }
    Ok(params)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = bias + W x` for row-major `W` of shape `[out.len(), x.len()]`.
fn affine(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weight[r * cols..(r + 1) * cols];
        *o = bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// `dw += dy ⊗ x`, `db += dy`, `dx += Wᵀ dy`.
fn affine_backward(
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        row.iter_mut().zip(x).for_each(|(w, v)| *w += g * v);
    }
    if let Some(db) = db {
        db.iter_mut().zip(dy).for_each(|(b, g)| *b += g);
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &weight[r * cols..(r + 1) * cols];
            dx.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
        }
    }
}

/// Resolved parameter indices for one spec.
struct Bound<'a> {
    spec: &'a NetworkSpec,
    params: &'a ParameterSet,
}

impl<'a> Bound<'a> {
    fn new(spec: &'a NetworkSpec, params: &'a ParameterSet) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::Parameters(format!(
                "spec expects {} tensors, parameter set has {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Parameters(format!(
                    "expected {name} {shape:?}, found {pname} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Bound { spec, params })
    }

    fn p(&self, index: usize) -> &'a [f64] {
        self.params.tensor(index).data()
    }

    fn core_index(&self) -> usize {
        2 * self.spec.feature_widths.len()
    }

    fn head_index(&self) -> usize {
        self.core_index()
            + match self.spec.core {
                CoreKind::Lstm => 3,
                CoreKind::Dense => 2,
            }
    }

    /// One time step. Fills `rec` and advances `state` (LSTM core only).
    fn step(&self, x: &[f64], state: &mut LstmState, rec: &mut StepRecord) {
        let spec = self.spec;
        rec.input.clear();
        rec.input.extend_from_slice(x);
        let mut prev: &[f64] = &rec.input;
        for (i, act) in rec.features.iter_mut().enumerate() {
            affine(self.p(2 * i), self.p(2 * i + 1), prev, act);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            prev = act;
        }
        let core_in: &[f64] = prev;
        let h = spec.hidden_width;
        let c0 = self.core_index();
        match spec.core {
            CoreKind::Lstm => {
                rec.h_prev.copy_from_slice(state.hidden.data());
                rec.c_prev.copy_from_slice(state.cell.data());
                affine(self.p(c0), self.p(c0 + 2), core_in, &mut rec.gates);
                matvec_accumulate(self.p(c0 + 1), &rec.h_prev, &mut rec.gates);
                for j in 0..h {
                    let i_g = sigmoid(rec.gates[GATE_INPUT * h + j]);
                    let f_g = sigmoid(rec.gates[GATE_FORGET * h + j]);
                    let g_g = rec.gates[GATE_CANDIDATE * h + j].tanh();
                    let o_g = sigmoid(rec.gates[GATE_OUTPUT * h + j]);
                    rec.gates[GATE_INPUT * h + j] = i_g;
                    rec.gates[GATE_FORGET * h + j] = f_g;
                    rec.gates[GATE_CANDIDATE * h + j] = g_g;
                    rec.gates[GATE_OUTPUT * h + j] = o_g;
                    let c = f_g * rec.c_prev[j] + i_g * g_g;
                    let tc = c.tanh();
                    rec.cell[j] = c;
                    rec.tanh_cell[j] = tc;
                    rec.hidden[j] = o_g * tc;
                }
                state.hidden.data_mut().copy_from_slice(&rec.hidden);
                state.cell.data_mut().copy_from_slice(&rec.cell);
            }
            CoreKind::Dense => {
                affine(self.p(c0), self.p(c0 + 1), core_in, &mut rec.hidden);
                rec.hidden.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let hd = self.head_index();
        affine(self.p(hd), self.p(hd + 1), &rec.hidden, &mut rec.q);
    }
}

/// `out += W x` for the recurrent contribution to the gate pre-activations.
fn matvec_accumulate(weight: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weight[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

#[derive(Clone, Debug)]
struct StepRecord {
    input: Vec<f64>,
    features: Vec<Vec<f64>>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gate values (pre-activations while filling).
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
    q: Vec<f64>,
}

impl StepRecord {
    fn new(spec: &NetworkSpec) -> Self {
        let h = spec.hidden_width;
        let lstm = spec.core == CoreKind::Lstm;
        let lw = |n: usize| if lstm { n } else { 0 };
        StepRecord {
            input: Vec::with_capacity(spec.input_dim),
            features: spec.feature_widths.iter().map(|&w| vec![0.0; w]).collect(),
            h_prev: vec![0.0; lw(h)],
            c_prev: vec![0.0; lw(h)],
            gates: vec![0.0; lw(4 * h)],
            cell: vec![0.0; lw(h)],
            tanh_cell: vec![0.0; lw(h)],
            hidden: vec![0.0; h],
            q: vec![0.0; spec.action_count],
        }
    }
}

/// Activations recorded by [`forward_sequence`], consumed by [`backward_sequence`].
#[derive(Clone, Debug)]
pub struct Tape<'a> {
    spec: &'a NetworkSpec,
    params: &'a ParameterSet,
    steps: Vec<StepRecord>,
}

impl Tape<'_> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn check_inputs<O: AsRef<[f64]>>(spec: &NetworkSpec, observations: &[O], initial: &LstmState) -> Result<()> {
    if let Some((t, o)) = observations
        .iter()
        .enumerate()
        .find(|(_, o)| o.as_ref().len() != spec.input_dim)
    {
        return Err(Error::shape(format!(
            "observation {t} has length {}, network expects {}",
            o.as_ref().len(),
            spec.input_dim
        )));
    }
    if initial.hidden.len() != spec.hidden_width || initial.cell.len() != spec.hidden_width {
        return Err(Error::shape(format!(
            "initial state width {} does not match hidden width {}",
            initial.width(),
            spec.hidden_width
        )));
    }
    Ok(())
}

fn q_tensor(rows: usize, spec: &NetworkSpec, data: Vec<f64>, op: &'static str) -> Result<Tensor> {
    let t = Tensor::from_vec(vec![rows, spec.action_count], data).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFinite(op),
        other => other,
    })?;
    Ok(t)
}

/// Runs the network over a sequence, recording activations for BPTT.
///
/// `q_values` has shape `[T, A]`; row `t` is the output after consuming
/// observations `0..=t`. The returned state can seed a later call.
pub fn forward_sequence<'a, O: AsRef<[f64]>>(
    params: &'a ParameterSet,
    spec: &'a NetworkSpec,
    observations: &[O],
    initial: &LstmState,
) -> Result<(Tensor, LstmState, Tape<'a>)> {
    let net = Bound::new(spec, params)?;
    check_inputs(spec, observations, initial)?;
    if observations.is_empty() {
        return Err(Error::shape("empty observation sequence"));
    }
    let mut state = initial.clone();
    let mut steps = Vec::with_capacity(observations.len());
    let mut q = Vec::with_capacity(observations.len() * spec.action_count);
    for obs in observations {
        let mut rec = StepRecord::new(spec);
        net.step(obs.as_ref(), &mut state, &mut rec);
        q.extend_from_slice(&rec.q);
        steps.push(rec);
    }
    let q = q_tensor(observations.len(), spec, q, "forward_sequence")?;
    Ok((q, state, Tape { spec, params, steps }))
}

/// Same arithmetic as [`forward_sequence`] without keeping a tape.
pub fn infer_sequence<O: AsRef<[f64]>>(
    params: &ParameterSet,
    spec: &NetworkSpec,
    observations: &[O],
    initial: &LstmState,
) -> Result<(Tensor, LstmState)> {
    let net = Bound::new(spec, params)?;
    check_inputs(spec, observations, initial)?;
    if observations.is_empty() {
        return Err(Error::shape("empty observation sequence"));
    }
    let mut state = initial.clone();
    let mut rec = StepRecord::new(spec);
    let mut q = Vec::with_capacity(observations.len() * spec.action_count);
    for obs in observations {
        net.step(obs.as_ref(), &mut state, &mut rec);
        q.extend_from_slice(&rec.q);
    }
    let q = q_tensor(observations.len(), spec, q, "infer_sequence")?;
    Ok((q, state))
}

/// Exact reverse-mode gradients for the scalar `Σ dloss_dq ⊙ Q`.
///
/// Returns parameter gradients summed over all steps and the gradient
/// with respect to the initial LSTM state (zero for a dense core).
pub fn backward_sequence(tape: &Tape<'_>, dloss_dq: &Tensor) -> Result<(GradientSet, LstmState)> {
    let spec = tape.spec;
    let net = Bound::new(spec, tape.params)?;
    if dloss_dq.shape() != [tape.steps.len(), spec.action_count] {
        return Err(Error::shape(format!(
            "dloss_dq has shape {:?}, tape expects [{}, {}]",
            dloss_dq.shape(),
            tape.steps.len(),
            spec.action_count
        )));
    }
    let mut grads = GradientSet::zeros_like(tape.params);
    let h = spec.hidden_width;
    let nf = spec.feature_widths.len();
    let c0 = net.core_index();
    let hd = net.head_index();

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dh = vec![0.0; h];
    let mut dgates = vec![0.0; 4 * h];
    let mut dcore_in = vec![0.0; spec.core_input()];

    for (t, rec) in tape.steps.iter().enumerate().rev() {
        let dq = dloss_dq.row(t);

        // head
        dh.copy_from_slice(&dh_next);
        {
            let (dw, db) = split_pair(&mut grads, hd);
            affine_backward(net.p(hd), &rec.hidden, dq, dw, Some(db), Some(&mut dh));
        }

        dcore_in.fill(0.0);
        let core_in: &[f64] = rec.features.last().unwrap_or(&rec.input);
        match spec.core {
            CoreKind::Lstm => {
                for j in 0..h {
                    let i_g = rec.gates[GATE_INPUT * h + j];
                    let f_g = rec.gates[GATE_FORGET * h + j];
                    let g_g = rec.gates[GATE_CANDIDATE * h + j];
                    let o_g = rec.gates[GATE_OUTPUT * h + j];
                    let tc = rec.tanh_cell[j];
                    let d_o = dh[j] * tc;
                    let dc = dh[j] * o_g * (1.0 - tc * tc) + dc_next[j];
                    let d_f = dc * rec.c_prev[j];
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    dc_next[j] = dc * f_g;
                    dgates[GATE_INPUT * h + j] = d_i * i_g * (1.0 - i_g);
                    dgates[GATE_FORGET * h + j] = d_f * f_g * (1.0 - f_g);
                    dgates[GATE_CANDIDATE * h + j] = d_g * (1.0 - g_g * g_g);
                    dgates[GATE_OUTPUT * h + j] = d_o * o_g * (1.0 - o_g);
                }
                dh_next.fill(0.0);
                affine_backward(
                    net.p(c0 + 1),
                    &rec.h_prev,
                    &dgates,
                    grads.tensor_mut(c0 + 1).data_mut(),
                    None,
                    Some(&mut dh_next),
                );
                let (dw, db) = split_lstm_input(&mut grads, c0);
                affine_backward(net.p(c0), core_in, &dgates, dw, Some(db), Some(&mut dcore_in));
            }
            CoreKind::Dense => {
                for (d, &a) in dh.iter_mut().zip(&rec.hidden) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                let (dw, db) = split_pair(&mut grads, c0);
                affine_backward(net.p(c0), core_in, &dh, dw, Some(db), Some(&mut dcore_in));
            }
        }

        // feature stack, last layer first
        let mut dact = dcore_in.clone();
        for i in (0..nf).rev() {
            for (d, &a) in dact.iter_mut().zip(&rec.features[i]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let x: &[f64] = if i == 0 { &rec.input } else { &rec.features[i - 1] };
            let mut dx = if i == 0 { Vec::new() } else { vec![0.0; x.len()] };
            let (dw, db) = split_pair(&mut grads, 2 * i);
            affine_backward(
                net.p(2 * i),
                x,
                &dact,
                dw,
                Some(db),
                if i == 0 { None } else { Some(&mut dx) },
            );
            dact = dx;
        }
    }

    let initial = match spec.core {
        CoreKind::Lstm => LstmState {
            hidden: Tensor::from_vec(vec![h], dh_next).map_err(|_| Error::NonFinite("backward_sequence"))?,
            cell: Tensor::from_vec(vec![h], dc_next).map_err(|_| Error::NonFinite("backward_sequence"))?,
        },
        CoreKind::Dense => LstmState::zeros(h),
    };
    if !grads.is_finite() {
        return Err(Error::NonFinite("backward_sequence"));
    }
    Ok((grads, initial))
}

/// Mutable weight and bias gradients stored at `index` and `index + 1`.
fn split_pair(grads: &mut GradientSet, index: usize) -> (&mut [f64], &mut [f64]) {
    split_indices(grads, index, index + 1)
}

/// LSTM input weight at `c0`, bias at `c0 + 2`.
fn split_lstm_input(grads: &mut GradientSet, c0: usize) -> (&mut [f64], &mut [f64]) {
    split_indices(grads, c0, c0 + 2)
}

fn split_indices(grads: &mut GradientSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    let (ta, tb) = grads.pair_mut(a, b);
    (ta.data_mut(), tb.data_mut())
}
