use super::agent::{env_repr, policy_logits, ActionMode, StepTrace};
use super::cell::{expected_transition, lstm_cell, skip_transition};
use super::params::{Bound, ParamId};
use super::ring::{State, StateRing};
use super::{ModelKind, SkipConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything a forward pass leaves on the tape that callers need.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[batch × C]` class scores from the last hidden state.
    pub logits: Var,
    /// Sampled/greedy/forced decisions; empty for the attention model.
    pub traces: Vec<StepTrace>,
    /// Skip distribution at every step, `[batch × K]`.
    pub dists: Vec<Var>,
    /// State after every step, `states[t]` for `t = 0..T`.
    pub states: Vec<State>,
}

fn check_inputs(cfg: &SkipConfig, inputs: &[Tensor]) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::contract("forward pass needs a non-empty sequence"))?;
    let (rows, cols) = first.as_matrix();
    for x in inputs {
        if x.rank() != 2 || x.as_matrix() != (rows, cfg.input_size) {
            return Err(Error::Shape {
                op: "forward_sequence",
                left: x.shape.clone(),
                right: vec![rows, cfg.input_size],
            });
        }
    }
    debug_assert_eq!(cols, cfg.input_size);
    Ok(rows)
}

fn initial_ring(tape: &mut Tape, cfg: &SkipConfig, rows: usize) -> StateRing<State> {
    let zero = tape.constant(Tensor::zeros(&[rows, cfg.hidden_size]));
    StateRing::new(cfg.max_skip, State { h: zero, c: zero })
}

fn output_head(tape: &mut Tape, h: Var, p: &Bound) -> Result<Var> {
    let scores = tape.matmul_nt(h, p.var(ParamId::OutW))?;
    tape.add_bias(scores, p.var(ParamId::OutB))
}

/// Runs the dynamic-skip LSTM over a batch of sequences.
///
/// `inputs[t]` is the `[batch × N_x]` input at step `t`. The agent observes a
/// gradient-stopped copy of `h_{t-1}`: the skip policy is trained only through
/// the REINFORCE surrogate and never sends gradient into the LSTM.
///
/// With `K = 1` the only action is the previous state, so the agent MLP is
/// not evaluated; the distribution is the constant `[1]`.
pub fn forward_sequence(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SkipConfig,
    inputs: &[Tensor],
    mut mode: ActionMode<'_>,
) -> Result<ForwardPass> {
    let rows = check_inputs(cfg, inputs)?;
    let mut ring = initial_ring(tape, cfg, rows);
    let mut traces = Vec::with_capacity(inputs.len());
    let mut dists = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let x = tape.constant(x.clone());
        let prev = *ring.get(1).expect("ring is never empty");
        let trace = if cfg.max_skip == 1 {
            if let ActionMode::Forced(all) = &mode {
                if all.get(t).is_none_or(|a| a.iter().any(|k| *k != 1)) {
                    return Err(Error::contract(format!("K=1 admits only skip 1 (step {t})")));
                }
            }
            StepTrace {
                actions: vec![1; rows],
                log_prob: tape.constant(Tensor::zeros(&[rows])),
                dist: tape.constant(Tensor::full(&[rows, 1], 1.0)),
            }
        } else {
            let observed = tape.detach(prev.h);
            let s = env_repr(tape, observed, x)?;
            let logits = policy_logits(tape, s, p)?;
            mode.select(tape, t, logits)?
        };
        let blended = skip_transition(tape, &ring, &trace.actions, cfg.lambda)?;
        let next = lstm_cell(tape, x, blended, p)?;
        ring.push(next);
        states.push(next);
        dists.push(trace.dist);
        traces.push(trace);
    }
    let last = states.last().expect("non-empty sequence").h;
    let logits = output_head(tape, last, p)?;
    Ok(ForwardPass {
        logits,
        traces,
        dists,
        states,
    }
    )
}

/// The soft-attention baseline: the selected past state is replaced by its
/// expectation under the skip distribution, so the whole pass (agent
/// included) is trained by ordinary backpropagation.
pub fn attention_forward(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SkipConfig,
    inputs: &[Tensor],
) -> Result<ForwardPass> {
    let rows = check_inputs(cfg, inputs)?;
    let mut ring = initial_ring(tape, cfg, rows);
    let mut dists = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        let x = tape.constant(x.clone());
        let prev = *ring.get(1).expect("ring is never empty");
        let s = env_repr(tape, prev.h, x)?;
        let logits = policy_logits(tape, s, p)?;
        let dist = tape.softmax(logits)?;
        let blended = expected_transition(tape, &ring, dist, cfg.lambda)?;
        let next = lstm_cell(tape, x, blended, p)?;
        ring.push(next);
        states.push(next);
        dists.push(dist);
    }
    let last = states.last().expect("non-empty sequence").h;
    let logits = output_head(tape, last, p)?;
    Ok(ForwardPass {
        logits,
        traces: Vec::new(),
        dists,
        states,
    })
}

/// Dispatches on the model kind. `mode` is ignored by the attention model.
pub fn run(
    tape: &mut Tape,
    p: &Bound,
    kind: ModelKind,
    cfg: &SkipConfig,
    inputs: &[Tensor],
    mode: ActionMode<'_>,
) -> Result<ForwardPass> {
    match kind {
        ModelKind::Dynskip => forward_sequence(tape, p, cfg, inputs, mode),
        ModelKind::Attention => attention_forward(tape, p, cfg, inputs),
    }
}
