//! Classification loss, the REINFORCE surrogate, and their minibatch sum.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ForwardPass;
use crate::tensor::Tensor;

/// Per-example cross-entropy `-log softmax(logits)[label]`, shape `[batch]`.
pub fn per_example_ce(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.value(logits).as_matrix().1;
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} outside 0..{classes}")));
    }
    let log_p = tape.log_softmax(logits)?;
    let picked = tape.gather(log_p, labels)?;
    Ok(tape.neg(picked))
}

/// Mean cross-entropy over the batch, shape `[1]`.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ce = per_example_ce(tape, logits, labels)?;
    Ok(tape.mean(ce))
}

/// What one sampled episode per example contributes to the objective.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    /// `R = log Pr(label | h_T)` per example; plain numbers.
    pub reward: Vec<f64>,
    /// `Σ_t log π(a_t | s_t)` per example, `[batch]`.
    pub sum_log_prob: Var,
    /// Cross-entropy per example, `[batch]`.
    pub ce_loss: Var,
}

impl EpisodeOutcome {
    pub fn from_pass(tape: &mut Tape, pass: &ForwardPass, labels: &[usize]) -> Result<Self> {
        let ce_loss = per_example_ce(tape, pass.logits, labels)?;
        let reward = tape.value(ce_loss).data.iter().map(|l| -l).collect::<Vec<_>>();
        let sum_log_prob = match pass.traces.split_first() {
            None => tape.constant(Tensor::zeros(&[labels.len()])),
            Some((first, rest)) => {
                let mut acc = first.log_prob;
                for tr in rest {
                    acc = tape.add(acc, tr.log_prob)?;
                }
                acc
            }
        };
        Ok(EpisodeOutcome {
            reward,
            sum_log_prob,
            ce_loss,
        })
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    /// The gradient-stopped REINFORCE coefficient `R - Σ log π - 1` per example.
    pub fn advantage(&self, tape: &Tape) -> Vec<f64> {
        self.reward
            .iter()
            .zip(&tape.value(self.sum_log_prob).data)
            .map(|(r, slp)| r - slp - 1.0)
            .collect()
    }
}

/// Per-example surrogate `-(Σ log π) · stop_grad(R - Σ log π - 1)`.
///
/// Its gradient in the agent parameters is the single-sample estimate of
/// `-∇(E[R] + H(π))`, so minimizing it ascends the entropy-regularized reward.
pub fn reinforce_surrogate(tape: &mut Tape, outcome: &EpisodeOutcome) -> Result<Var> {
    let coeff = tape.constant(Tensor::vector(outcome.advantage(tape)));
    let weighted = tape.mul(outcome.sum_log_prob, coeff)?;
    Ok(tape.neg(weighted))
}

/// `mean_m (J1 - J2)` with `J2` realized by its surrogate.
pub fn joint_loss(tape: &mut Tape, outcome: &EpisodeOutcome) -> Result<Var> {
    if outcome.is_empty() {
        return Err(Error::contract("joint loss over an empty batch"));
    }
    let surrogate = reinforce_surrogate(tape, outcome)?;
    let total = tape.add(outcome.ce_loss, surrogate)?;
    Ok(tape.mean(total))
}

/// Mean entropy (nats) of a batch of distributions `[rows × K]`.
pub fn mean_entropy(dist: &Tensor) -> f64 {
    let (rows, _) = dist.as_matrix();
    let total: f64 = (0..rows)
        .map(|r| -dist.row(r).iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        .sum();
    total / rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_ten() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::zeros(&[1, 10]));
        let l = classification_loss(&mut t, logits, &[3]).unwrap();
        assert!((t.value(l).item() - 10f64.ln()).abs() < 1e-12);
        assert!((t.value(l).item() - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn dominant_true_class_drives_loss_to_zero() {
        let mut t = Tape::new();
        let mut row = vec![0.0; 10];
        row[4] = 800.0;
        let logits = t.leaf(Tensor::from_rows(&[row]).unwrap());
        let l = classification_loss(&mut t, logits, &[4]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::zeros(&[1, 10]));
        assert!(matches!(classification_loss(&mut t, logits, &[10]), Err(Error::Contract(_))));
    }

    #[test]
    fn classification_gradient_matches_finite_differences() {
        let base = Tensor::from_rows(&[vec![0.3, -1.2, 0.8, 0.1], vec![-0.4, 0.9, 0.2, -1.5]]).unwrap();
        let labels = [2, 1];
        let eval = |x: &Tensor| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let l = classification_loss(&mut t, v, &labels).unwrap();
            t.value(l).item()
        };
        let mut t = Tape::new();
        let v = t.leaf(base.clone());
        let l = classification_loss(&mut t, v, &labels).unwrap();
        t.backward(l).unwrap();
        let g = t.grad(v).unwrap();
        for j in 0..base.numel() {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.data[j] += 1e-5;
            m.data[j] -= 1e-5;
            let fd = (eval(&p) - eval(&m)) / 2e-5;
            assert!((fd - g.data[j]).abs() / fd.abs().max(1e-5) < 1e-4);
        }
    }

    fn outcome(t: &mut Tape, reward: Vec<f64>, slp: Vec<f64>, ce: Vec<f64>) -> (EpisodeOutcome, Var) {
        let slp_var = t.leaf(Tensor::vector(slp));
        let ce = t.leaf(Tensor::vector(ce));
        (
            EpisodeOutcome {
                reward,
                sum_log_prob: slp_var,
                ce_loss: ce,
            },
            slp_var,
        )
    }

    #[test]
    fn zero_advantage_sends_no_gradient_to_the_policy() {
        let mut t = Tape::new();
        // R = Σ log π + 1
        let (o, slp) = outcome(&mut t, vec![-1.5], vec![-2.5], vec![1.5]);
        let s = reinforce_surrogate(&mut t, &o).unwrap();
        let s = t.sum(s);
        t.backward(s).unwrap();
        assert_eq!(t.grad(slp).unwrap().data, vec![0.0]);
    }

    #[test]
    fn deterministic_path_gives_zero_surrogate() {
        let mut t = Tape::new();
        let (o, _) = outcome(&mut t, vec![-0.7], vec![0.0], vec![0.7]);
        let s = reinforce_surrogate(&mut t, &o).unwrap();
        assert_eq!(t.value(s).data, vec![0.0]);
    }

    #[test]
    fn surrogate_gradient_is_minus_advantage() {
        let mut t = Tape::new();
        let (o, slp) = outcome(&mut t, vec![-2.0, -0.5], vec![-3.0, -1.0], vec![2.0, 0.5]);
        let s = reinforce_surrogate(&mut t, &o).unwrap();
        let s = t.sum(s);
        t.backward(s).unwrap();
        assert_eq!(t.grad(slp).unwrap().data, vec![-(-2.0 + 3.0 - 1.0), -(-0.5 + 1.0 - 1.0)]);
    }

    #[test]
    fn joint_loss_single_zero_advantage_is_ce() {
        let mut t = Tape::new();
        let (o, _) = outcome(&mut t, vec![-1.5], vec![-2.5], vec![1.5]);
        let j = joint_loss(&mut t, &o).unwrap();
        assert_eq!(t.value(j).item(), 1.5);
    }

    #[test]
    fn joint_loss_ignores_batch_order() {
        let mut t = Tape::new();
        let (a, _) = outcome(&mut t, vec![-1.0, -2.0, -0.3], vec![-4.0, -2.2, -9.0], vec![1.0, 2.0, 0.3]);
        let (b, _) = outcome(&mut t, vec![-0.3, -1.0, -2.0], vec![-9.0, -4.0, -2.2], vec![0.3, 1.0, 2.0]);
        let ja = joint_loss(&mut t, &a).unwrap();
        let jb = joint_loss(&mut t, &b).unwrap();
        assert!((t.value(ja).item() - t.value(jb).item()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut t = Tape::new();
        let (o, _) = outcome(&mut t, vec![], vec![], vec![]);
        assert!(joint_loss(&mut t, &o).is_err());
    }

    #[test]
    fn entropy_of_uniform_and_point_mass() {
        let u = Tensor::from_rows(&[vec![0.25; 4]]).unwrap();
        assert!((mean_entropy(&u) - 4f64.ln()).abs() < 1e-12);
        let d = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(mean_entropy(&d), 0.0);
    }
}
