//! Exact expectations over every skip trajectory of a small model.

use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::Serialize;

use super::fd::relative_error;
use crate::autodiff::{Tape, Var};
use crate::data::{encode_batch, Example};
use crate::error::{Error, Result};
use crate::model::{forward_sequence, ActionMode, Bound, Checkpoint, ModelKind, ModelParams, ParamId, SkipConfig};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{reinforce_surrogate, EpisodeOutcome};

/// Largest number of trajectories the oracle will enumerate.
pub const TRAJECTORY_BUDGET: usize = 10_000;

const AGENT: [ParamId; 4] = [ParamId::AgentW1, ParamId::AgentB1, ParamId::AgentW2, ParamId::AgentB2];

/// Where the terminal reward comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reward {
    /// `log Pr(label | h_T)` under the model.
    Model,
    /// The same value for every trajectory.
    Constant(f64),
}

/// A dynamic-skip model small enough to enumerate, with weights scaled up
/// from the usual initialization so its policy is far from uniform.
pub fn toy_model(max_skip: usize, hidden_size: usize, seed: u64, scale: f64) -> Result<Checkpoint> {
    let cfg = SkipConfig {
        max_skip,
        lambda: 0.5,
        hidden_size,
        input_size: 10,
        num_classes: 10,
    };
    let mut params = ModelParams::init(cfg, seed)?;
    let mut r = rng::stream(seed, "toy.bias");
    for id in ParamId::ALL {
        let t = params.get_mut(id);
        for w in t.data.iter_mut() {
            *w = if id.is_bias() { r.gen_range(-scale..scale) * 0.05 } else { *w * scale };
        }
    }
    Ok(Checkpoint::new(ModelKind::Dynskip, params))
}

/// Every action sequence of a `T`-step, `K`-way policy as `[T][trajectory]`.
pub fn all_trajectories(steps: usize, max_skip: usize) -> Result<Vec<Vec<usize>>> {
    let count = (0..steps).try_fold(1usize, |acc, _| acc.checked_mul(max_skip));
    let count = match count {
        Some(c) if c <= TRAJECTORY_BUDGET => c,
        _ => {
            return Err(Error::contract(format!(
                "K^T = {max_skip}^{steps} exceeds the budget of {TRAJECTORY_BUDGET} trajectories"
            )))
        }
    };
    let mut actions = vec![vec![0; count]; steps];
    for row in 0..count {
        let mut code = row;
        for step in actions.iter_mut() {
            step[row] = code % max_skip + 1;
            code /= max_skip;
        }
    }
    Ok(actions)
}

struct Enumerated {
    bound: Bound,
    outcome: EpisodeOutcome,
    /// `q(τ)` per trajectory.
    q: Vec<f64>,
}

fn build(tape: &mut Tape, ck: &Checkpoint, example: &Example, reward: Reward) -> Result<Enumerated> {
    if ck.kind != ModelKind::Dynskip {
        return Err(Error::contract("trajectory enumeration needs the dynamic-skip model"));
    }
    let actions = all_trajectories(example.len(), ck.config().max_skip)?;
    let rows = actions[0].len();
    let batch = vec![example; rows];
    let inputs = encode_batch(&batch)?;
    let bound = ck.params.bind(tape);
    let pass = forward_sequence(tape, &bound, ck.config(), &inputs, ActionMode::Forced(&actions))?;
    let mut outcome = EpisodeOutcome::from_pass(tape, &pass, &vec![example.label; rows])?;
    if let Reward::Constant(c) = reward {
        outcome.reward = vec![c; rows];
    }
    let q = tape.value(outcome.sum_log_prob).data.iter().map(|l| l.exp()).collect();
    Ok(Enumerated { bound, outcome, q })
}

fn agent_grads(tape: &Tape, bound: &Bound) -> Vec<Tensor> {
    AGENT.iter().map(|id| tape.grad_or_zeros(bound.var(*id))).collect()
}

/// `Σ_τ q(τ) ĝ(τ)`: the exact expectation of the single-sample estimator,
/// where `ĝ` is the ascent direction of the training surrogate.
fn expected_estimator(tape: &mut Tape, e: &Enumerated) -> Result<Vec<Tensor>> {
    let surrogate = reinforce_surrogate(tape, &e.outcome)?;
    let weights = tape.constant(Tensor::vector(e.q.clone()));
    let weighted = tape.mul(surrogate, weights)?;
    let total = tape.sum(weighted);
    let ascent = tape.neg(total);
    tape.backward(ascent)?;
    Ok(agent_grads(tape, &e.bound))
}

#[derive(Clone, Debug, Serialize)]
pub struct NamedGradient {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub exact: Vec<f64>,
    pub estimator_mean: Vec<f64>,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationReport {
    pub trajectories: usize,
    pub probability_sum: f64,
    pub expected_reward: f64,
    /// Entropy of the trajectory distribution, `-Σ q log q`.
    pub entropy: f64,
    /// `E[R] + H`.
    pub objective: f64,
    pub gradients: Vec<NamedGradient>,
    /// Largest coordinate-wise relative error between the exact gradient
    /// and the expected estimator.
    pub max_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloReport>,
}

/// Denominator floor for gradient comparisons; both sides are exact sums,
/// so only genuinely zero coordinates approach it.
const GRAD_FLOOR: f64 = 1e-12;

/// Enumerates all `K^T` trajectories for one example and compares the exact
/// gradient of `J2 = E[R] + H(π)` in the agent parameters with the
/// probability-weighted average of the per-trajectory surrogate gradients.
pub fn enumerate_trajectories(ck: &Checkpoint, example: &Example, reward: Reward) -> Result<EnumerationReport> {
    let mut tape = Tape::new();
    let e = build(&mut tape, ck, example, reward)?;
    let rows = e.q.len();

    // exact objective, differentiated directly
    let q = tape.exp(e.outcome.sum_log_prob);
    let r = match reward {
        Reward::Model => tape.neg(e.outcome.ce_loss),
        Reward::Constant(c) => tape.constant(Tensor::full(&[rows], c)),
    };
    let gap = tape.sub(r, e.outcome.sum_log_prob)?;
    let weighted = tape.mul(q, gap)?;
    let j2 = tape.sum(weighted);
    tape.backward(j2)?;
    let exact = agent_grads(&tape, &e.bound);
    tape.zero_grads();
    let estimated = expected_estimator(&mut tape, &e)?;

    let slp = &tape.value(e.outcome.sum_log_prob).data;
    let expected_reward: f64 = e.q.iter().zip(&e.outcome.reward).map(|(q, r)| q * r).sum();
    // q log q → 0 as q → 0
    let entropy: f64 = -e.q.iter().zip(slp).filter(|(q, _)| **q > 0.0).map(|(q, l)| q * l).sum::<f64>();

    let gradients: Vec<NamedGradient> = AGENT
        .iter()
        .zip(exact.into_iter().zip(estimated))
        .map(|(id, (ex, est))| {
            let max_rel_error = ex
                .data
                .iter()
                .zip(&est.data)
                .map(|(a, b)| relative_error(*a, *b, GRAD_FLOOR))
                .fold(0.0, f64::max);
            NamedGradient {
                name: id.name(),
                shape: ex.shape.clone(),
                exact: ex.data,
                estimator_mean: est.data,
                max_rel_error,
            }
        })
        .collect();
    let max_rel_error = gradients.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(EnumerationReport {
        trajectories: rows,
        probability_sum: e.q.iter().sum(),
        expected_reward,
        entropy,
        objective: expected_reward + entropy,
        gradients,
        max_rel_error,
        monte_carlo: None,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Projection {
    pub exact: f64,
    pub sampled_mean: f64,
    pub standard_error: f64,
    /// `|sampled_mean - exact| / standard_error`.
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloReport {
    pub samples: usize,
    pub batches: usize,
    pub projections: Vec<Projection>,
}

impl MonteCarloReport {
    pub fn max_z(&self) -> f64 {
        self.projections.iter().map(|p| p.z).fold(0.0, f64::max)
    }
}

fn flatten(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data.iter().copied()).collect()
}

fn unit_directions(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `samples` trajectories from the policy in `batches` equal batches,
/// averages the single-sample estimator, and compares its projection onto
/// three fixed random directions with the exact gradient. Standard errors
/// come from the spread of the batch means.
pub fn monte_carlo_check(
    ck: &Checkpoint,
    example: &Example,
    reward: Reward,
    samples: usize,
    batches: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if batches < 2 || !samples.is_multiple_of(batches) {
        return Err(Error::contract("samples must split evenly into at least two batches"));
    }
    let exact = {
        let report = enumerate_trajectories(ck, example, reward)?;
        report.gradients.iter().flat_map(|g| g.exact.clone()).collect::<Vec<_>>()
    };
    let mut dir_rng = rng::stream(seed, "mc.directions");
    let directions = unit_directions(exact.len(), 3, &mut dir_rng);
    let mut actions = rng::stream(seed, "actions");
    let per = samples / batches;
    let batch = vec![example; per];
    let inputs = encode_batch(&batch)?;
    let mut tape = Tape::new();
    let mut batch_proj: Vec<Vec<f64>> = vec![Vec::with_capacity(batches); directions.len()];
    for _ in 0..batches {
        tape.clear();
        let bound = ck.params.bind(&mut tape);
        let pass = forward_sequence(&mut tape, &bound, ck.config(), &inputs, ActionMode::Sample(&mut actions))?;
        let mut outcome = EpisodeOutcome::from_pass(&mut tape, &pass, &vec![example.label; per])?;
        if let Reward::Constant(c) = reward {
            outcome.reward = vec![c; per];
        }
        let surrogate = reinforce_surrogate(&mut tape, &outcome)?;
        let mean = tape.mean(surrogate);
        let ascent: Var = tape.neg(mean);
        tape.backward(ascent)?;
        let g = flatten(&agent_grads(&tape, &bound));
        for (d, acc) in directions.iter().zip(batch_proj.iter_mut()) {
            acc.push(dot(d, &g));
        }
    }
    let projections = directions
        .iter()
        .zip(&batch_proj)
        .map(|(d, means)| {
            let (mean, std) = crate::train::mean_std(means);
            let standard_error = std / (batches as f64).sqrt();
            let exact = dot(d, &exact);
            Projection {
                exact,
                sampled_mean: mean,
                standard_error,
                z: (mean - exact).abs() / standard_error,
            }
        })
        .collect();
    Ok(MonteCarloReport {
        samples,
        batches,
        projections,
    })
}

/// Plain gradient ascent on the exact expected estimator with the reward
/// switched off. Returns the per-step entropy `H(q) / T` before each update
/// and after the last one.
pub fn entropy_ascent(ck: &Checkpoint, example: &Example, learning_rate: f64, iterations: usize) -> Result<Vec<f64>> {
    let mut ck = ck.clone();
    let steps = example.len() as f64;
    let mut trace = Vec::with_capacity(iterations + 1);
    let mut tape = Tape::new();
    for i in 0..=iterations {
        tape.clear();
        let e = build(&mut tape, &ck, example, Reward::Constant(0.0))?;
        let slp = &tape.value(e.outcome.sum_log_prob).data;
        let h: f64 = -e.q.iter().zip(slp).filter(|(q, _)| **q > 0.0).map(|(q, l)| q * l).sum::<f64>();
        trace.push(h / steps);
        if i == iterations {
            break;
        }
        let grads = expected_estimator(&mut tape, &e)?;
        for (id, g) in AGENT.iter().zip(&grads) {
            for (w, d) in ck.params.get_mut(*id).data.iter_mut().zip(&g.data) {
                *w += learning_rate * d;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Example {
        Example { tokens: vec![4, 7, 1], label: 7 }
    }

    #[test]
    fn trajectories_cover_every_sequence_once() {
        let a = all_trajectories(3, 2).unwrap();
        let mut seen: Vec<Vec<usize>> = (0..8).map(|r| a.iter().map(|s| s[r]).collect()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        assert!(all_trajectories(9, 3).is_err());
        assert_eq!(all_trajectories(4, 10).unwrap()[0].len(), 10_000);
    }

    #[test]
    fn exact_and_estimated_gradients_agree() {
        let ck = toy_model(2, 3, 5, 20.0).unwrap();
        let r = enumerate_trajectories(&ck, &example(), Reward::Model).unwrap();
        assert_eq!(r.trajectories, 8);
        assert!((r.probability_sum - 1.0).abs() < 1e-10);
        assert!(r.entropy > 0.0 && r.entropy <= 3.0 * 2f64.ln() + 1e-12);
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        let norm: f64 = r.gradients.iter().flat_map(|g| &g.exact).map(|v| v * v).sum();
        assert!(norm > 1e-6, "gradient is degenerate");
    }

    #[test]
    fn constant_reward_leaves_only_the_entropy_gradient() {
        let ck = toy_model(2, 3, 6, 20.0).unwrap();
        let a = enumerate_trajectories(&ck, &example(), Reward::Constant(-1.3)).unwrap();
        let b = enumerate_trajectories(&ck, &example(), Reward::Constant(0.0)).unwrap();
        assert!((a.expected_reward + 1.3).abs() < 1e-12);
        for (ga, gb) in a.gradients.iter().zip(&b.gradients) {
            for (x, y) in ga.exact.iter().zip(&gb.exact) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn deterministic_policy_has_one_trajectory() {
        let mut ck = toy_model(2, 3, 7, 1.0).unwrap();
        ck.params.get_mut(ParamId::AgentB2).data = vec![1000.0, 0.0];
        let r = enumerate_trajectories(&ck, &example(), Reward::Model).unwrap();
        assert_eq!(r.entropy, 0.0);
        assert!((r.probability_sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_mean_is_unbiased() {
        let ck = toy_model(2, 3, 5, 20.0).unwrap();
        let r = monte_carlo_check(&ck, &example(), Reward::Model, 20_000, 20, 3).unwrap();
        assert!(r.max_z() < 4.0, "{:#?}", r.projections);
    }

    #[test]
    fn zero_reward_ascent_drives_policy_uniform() {
        let ck = toy_model(2, 3, 8, 20.0).unwrap();
        let trace = entropy_ascent(&ck, &example(), 0.01, 4000).unwrap();
        let drops: Vec<_> = trace
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] - 1e-12)
            .map(|(i, w)| (i, w[0], w[1]))
            .collect();
        assert!(drops.is_empty(), "not monotone: {:?} of {}", &drops[..drops.len().min(5)], drops.len());
        assert!(2f64.ln() - trace.last().unwrap() < 1e-3, "{:?}", trace.last());
    }

    #[test]
    fn attention_model_is_rejected() {
        let mut ck = toy_model(2, 3, 5, 1.0).unwrap();
        ck.kind = ModelKind::Attention;
        assert!(enumerate_trajectories(&ck, &example(), Reward::Model).is_err());
    }
}
