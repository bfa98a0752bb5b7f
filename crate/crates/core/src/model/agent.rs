//! The skip agent: a one-hidden-layer MLP over `h_{t-1} ⊕ x_t` whose softmax
//! output is the distribution over skip lengths `1..=K`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Environment representation `s_t = h_{t-1} ⊕ x_t`.
pub fn env_repr(tape: &mut Tape, h_prev: Var, x: Var) -> Result<Var> {
    tape.concat(h_prev, x)
}

/// `W2 · tanh(W1 · s + b1) + b2`, row-wise over a batch of environments.
pub fn policy_logits(tape: &mut Tape, s: Var, p: &Bound) -> Result<Var> {
    let hidden = tape.matmul_nt(s, p.var(ParamId::AgentW1))?;
    let hidden = tape.add_bias(hidden, p.var(ParamId::AgentB1))?;
    let hidden = tape.tanh(hidden);
    let logits = tape.matmul_nt(hidden, p.var(ParamId::AgentW2))?;
    tape.add_bias(logits, p.var(ParamId::AgentB2))
}

pub fn policy_dist(tape: &mut Tape, s: Var, p: &Bound) -> Result<Var> {
    let logits = policy_logits(tape, s, p)?;
    tape.softmax(logits)
}

/// One step's skip decision for every row of a batch.
#[derive(Clone, Debug)]
pub struct StepTrace {
    /// Chosen skip per row, in `1..=K`.
    pub actions: Vec<usize>,
    /// `log π(action | s_t)` per row, differentiable in the agent parameters.
    pub log_prob: Var,
    /// The full distribution, `[batch × K]`.
    pub dist: Var,
}

/// How actions are chosen from the skip distribution.
pub enum ActionMode<'a> {
    Sample(&'a mut ChaCha8Rng),
    /// Argmax, ties toward the shorter skip.
    Greedy,
    /// `actions[t][row]`, each in `1..=K`.
    Forced(&'a [Vec<usize>]),
}

/// Inverse-CDF draw; returns a zero-based index.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // rounding left the cumulative sum short of `u`; fall back to the last
    // index that carries mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// First index of the maximum; zero-based.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
        .0
}

impl ActionMode<'_> {
    fn choose(&mut self, t: usize, dist: &Tensor) -> Result<Vec<usize>> {
        let (rows, k) = dist.as_matrix();
        match self {
            ActionMode::Sample(rng) => Ok((0..rows)
                .map(|r| sample_index(dist.row(r), rng.gen::<f64>()) + 1)
                .collect()),
            ActionMode::Greedy => Ok((0..rows).map(|r| argmax(dist.row(r)) + 1).collect()),
            ActionMode::Forced(all) => {
                let step = all
                    .get(t)
                    .ok_or_else(|| Error::contract(format!("no forced actions for step {t}")))?;
                if step.len() != rows || step.iter().any(|a| *a == 0 || *a > k) {
                    return Err(Error::contract(format!(
                        "forced actions {step:?} at step {t} do not fit {rows} rows with K={k}"
                    )));
                }
                Ok(step.clone())
            }
        }
    }

    /// Picks actions at step `t` from agent logits and records their log-probabilities.
    pub fn select(&mut self, tape: &mut Tape, t: usize, logits: Var) -> Result<StepTrace> {
        let dist = tape.softmax(logits)?;
        let actions = self.choose(t, tape.value(dist))?;
        let log_dist = tape.log_softmax(logits)?;
        let zero_based: Vec<usize> = actions.iter().map(|a| a - 1).collect();
        let log_prob = tape.gather(log_dist, &zero_based)?;
        Ok(StepTrace { actions, log_prob, dist })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, SkipConfig};
    use rand::SeedableRng;

    type Mode<'a> = ActionMode<'a>;

    fn cfg(k: usize) -> SkipConfig {
        SkipConfig {
            max_skip: k,
            lambda: 0.5,
            hidden_size: 2,
            input_size: 3,
            num_classes: 10,
        }
    }

    #[test]
    fn env_repr_concatenates_history_then_input() {
        let mut t = Tape::new();
        let h = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let x = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let s = env_repr(&mut t, h, x).unwrap();
        assert_eq!(t.value(s).data, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let h = t.constant(Tensor::vector(vec![0.5]));
        let x = t.constant(Tensor::vector(vec![0.25]));
        let s = env_repr(&mut t, h, x).unwrap();
        assert_eq!(t.value(s).data, vec![0.5, 0.25]);
    }

    #[test]
    fn zero_output_layer_gives_uniform_policy() {
        let mut params = ModelParams::init(cfg(4), 1).unwrap();
        params.get_mut(ParamId::AgentW2).data.fill(0.0);
        let mut t = Tape::new();
        let b = params.bind(&mut t);
        let s = t.constant(Tensor::from_rows(&[vec![0.3, -0.2, 1.0, 0.0, 0.0]]).unwrap());
        let p = policy_dist(&mut t, s, &b).unwrap();
        assert_eq!(t.value(p).data, vec![0.25; 4]);
    }

    #[test]
    fn policy_sums_to_one_for_random_params() {
        for seed in 0..20 {
            let params = ModelParams::init(cfg(5), seed).unwrap();
            let mut t = Tape::new();
            let b = params.bind(&mut t);
            let s = t.constant(Tensor::from_rows(&[vec![0.9, -0.4, 0.0, 1.0, 0.0]]).unwrap());
            let p = policy_dist(&mut t, s, &b).unwrap();
            let total: f64 = t.value(p).data.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_distribution_always_picks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[1.0, 0.0, 0.0], rng.gen()), 0);
        }
        assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
    }

    #[test]
    fn sample_frequencies_match_distribution() {
        let p = [0.2, 0.3, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_index(&p, rng.gen())] += 1;
        }
        for (c, want) in counts.iter().zip(p) {
            assert!((*c as f64 / n as f64 - want).abs() < 0.01);
        }
    }

    #[test]
    fn greedy_breaks_ties_toward_shorter_skip() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn traces_are_consistent_and_seeded() {
        let draw = |seed| {
            let mut t = Tape::new();
            let logits = t.constant(
                Tensor::from_rows(&[vec![0.1, 2.0, -1.0], vec![0.0, 0.0, 3.0]]).unwrap(),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut actions = Vec::new();
            for step in 0..20 {
                let tr = Mode::Sample(&mut rng).select(&mut t, step, logits).unwrap();
                let lp = t.value(tr.log_prob).clone();
                let dist = t.value(tr.dist).clone();
                for (r, a) in tr.actions.iter().enumerate() {
                    assert!((lp.data[r].exp() - dist.row(r)[a - 1]).abs() < 1e-10);
                }
                actions.push(tr.actions);
            }
            actions
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn forced_actions_are_validated() {
        let mut t = Tape::new();
        let logits = t.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let ok = vec![vec![2]];
        let tr = Mode::Forced(&ok).select(&mut t, 0, logits).unwrap();
        assert_eq!(tr.actions, vec![2]);
        let bad = vec![vec![3]];
        assert!(Mode::Forced(&bad).select(&mut t, 0, logits).is_err());
        let greedy = Mode::Greedy.select(&mut t, 0, logits).unwrap();
        assert_eq!(greedy.actions, vec![1]);
    }
}
