use super::params::{Bound, ParamId};
use super::ring::{State, StateRing};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

fn blend(tape: &mut Tape, selected: Var, prev: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(prev);
    }
    if lambda == 1.0 {
        return Ok(selected);
    }
    let a = tape.scale(selected, lambda);
    let b = tape.scale(prev, 1.0 - lambda);
    tape.add(a, b)
}

/// `h̃ = λ·h_{t-k} + (1-λ)·h_{t-1}` and likewise for `c`, with a per-row `k`.
pub fn skip_transition(
    tape: &mut Tape,
    ring: &StateRing<State>,
    actions: &[usize],
    lambda: f64,
) -> Result<State> {
    let k_max = ring.capacity();
    if let Some(bad) = actions.iter().find(|&&k| k == 0 || k > k_max) {
        return Err(Error::contract(format!("skip {bad} outside 1..={k_max}")));
    }
    let prev = *ring.get(1).expect("ring is never empty");
    let selected = if actions.iter().all(|&k| k == actions[0]) {
        *ring.get(actions[0]).expect("checked above")
    } else {
        let index: Vec<usize> = actions.iter().map(|k| k - 1).collect();
        let hs: Vec<Var> = ring.iter().map(|s| s.h).collect();
        let cs: Vec<Var> = ring.iter().map(|s| s.c).collect();
        State {
            h: tape.select_rows(&hs, &index)?,
            c: tape.select_rows(&cs, &index)?,
        }
    };
    Ok(State {
        h: blend(tape, selected.h, prev.h, lambda)?,
        c: blend(tape, selected.c, prev.c, lambda)?,
    })
}

/// Attention-style transition: the selected state is replaced by its
/// expectation under `dist: [batch × K]`.
pub fn expected_transition(
    tape: &mut Tape,
    ring: &StateRing<State>,
    dist: Var,
    lambda: f64,
) -> Result<State> {
    let prev = *ring.get(1).expect("ring is never empty");
    if lambda == 0.0 {
        return Ok(prev);
    }
    let rows = tape.value(dist).as_matrix().0;
    let mut acc: Option<State> = None;
    for (i, s) in ring.iter().enumerate() {
        let weight = tape.gather(dist, &vec![i; rows])?;
        let h = tape.row_scale(s.h, weight)?;
        let c = tape.row_scale(s.c, weight)?;
        acc = Some(match acc {
            None => State { h, c },
            Some(a) => State {
                h: tape.add(a.h, h)?,
                c: tape.add(a.c, c)?,
            },
        });
    }
    let expected = acc.expect("ring is never empty");
    Ok(State {
        h: blend(tape, expected.h, prev.h, lambda)?,
        c: blend(tape, expected.c, prev.c, lambda)?,
    })
}

/// One LSTM step from the blended state.
///
/// The four gate pre-activations come from one fused affine map of
/// `[x_t; h̃]`; then `c_t = tanh(g) ⊙ σ(i) + c̃ ⊙ σ(f)` and
/// `h_t = σ(o) ⊙ tanh(c_t)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, prev: State, p: &Bound) -> Result<State> {
    let hidden = tape.value(prev.h).as_matrix().1;
    let from_x = tape.matmul_nt(x, p.var(ParamId::LstmWx))?;
    let from_h = tape.matmul_nt(prev.h, p.var(ParamId::LstmWh))?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add_bias(pre, p.var(ParamId::LstmB))?;
    let g = tape.narrow(pre, 0, hidden)?;
    let i = tape.narrow(pre, hidden, hidden)?;
    let f = tape.narrow(pre, 2 * hidden, hidden)?;
    let o = tape.narrow(pre, 3 * hidden, hidden)?;

    let g = tape.tanh(g);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let write = tape.mul(g, i)?;
    let keep = tape.mul(prev.c, f)?;
    let c = tape.add(write, keep)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(State { h, c })
}
