use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{mean_entropy, per_example_ce};
use crate::autodiff::Tape;
use crate::data::{encode_batch, Example};
use crate::error::{Error, Result};
use crate::model::{argmax, run, ActionMode, Checkpoint};
use crate::rng;

/// How skip actions are chosen at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Most probable skip at every step.
    Greedy,
    /// One sampled trajectory per example from the seed's `actions` stream.
    Sampled { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub accuracy: f64,
    /// Mean cross-entropy.
    pub loss: f64,
    /// Mean entropy of the skip distribution over steps and examples.
    pub policy_entropy: f64,
}

pub const DEFAULT_EVAL_BATCH: usize = 100;

/// Classification accuracy and loss of `ck` on `examples`.
pub fn evaluate(
    ck: &Checkpoint,
    examples: &[Example],
    mode: EvalMode,
    batch_size: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation over an empty split"));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut sampler: Option<ChaCha8Rng> = match mode {
        EvalMode::Greedy => None,
        EvalMode::Sampled { seed } => Some(rng::stream(seed, "actions")),
    };
    let mut tape = Tape::new();
    let (mut correct, mut loss, mut entropy) = (0usize, 0.0, 0.0);
    for chunk in examples.chunks(batch_size) {
        tape.clear();
        let bound = ck.params.bind(&mut tape);
        let refs: Vec<&Example> = chunk.iter().collect();
        let inputs = encode_batch(&refs)?;
        let mode = match sampler.as_mut() {
            Some(r) => ActionMode::Sample(r),
            None => ActionMode::Greedy,
        };
        let pass = run(&mut tape, &bound, ck.kind, ck.config(), &inputs, mode)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let ce = per_example_ce(&mut tape, pass.logits, &labels)?;
        loss += tape.value(ce).data.iter().sum::<f64>();
        let logits = tape.value(pass.logits);
        correct += labels
            .iter()
            .enumerate()
            .filter(|(r, l)| argmax(logits.row(*r)) == **l)
            .count();
        let steps = pass.dists.len() as f64;
        entropy += pass
            .dists
            .iter()
            .map(|d| mean_entropy(tape.value(*d)))
            .sum::<f64>()
            / steps
            * chunk.len() as f64;
    }
    let n = examples.len() as f64;
    Ok(EvalReport {
        examples: examples.len(),
        accuracy: correct as f64 / n,
        loss: loss / n,
        policy_entropy: entropy / n,
    })
}

/// Accuracy over several independently sampled evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

pub fn evaluate_sampled(
    ck: &Checkpoint,
    examples: &[Example],
    runs: usize,
    seed: u64,
    batch_size: usize,
) -> Result<SampledSummary> {
    if runs == 0 {
        return Err(Error::Config("need at least one sampled evaluation".into()));
    }
    let accuracies = (0..runs)
        .map(|i| {
            let run_seed = rng::derive_seed(seed, &format!("eval.{i}"));
            evaluate(ck, examples, EvalMode::Sampled { seed: run_seed }, batch_size).map(|r| r.accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&accuracies);
    Ok(SampledSummary { accuracies, mean, std })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec, Variant};
    use crate::model::{ModelKind, ModelParams, SkipConfig};

    fn small() -> (Checkpoint, Vec<Example>) {
        let cfg = SkipConfig {
            max_skip: 3,
            lambda: 0.5,
            hidden_size: 8,
            input_size: 10,
            num_classes: 10,
        };
        let ck = Checkpoint::new(ModelKind::Dynskip, ModelParams::init(cfg, 4).unwrap());
        let spec = DatasetSpec {
            train: 1,
            dev: 37,
            test: 1,
            ..DatasetSpec::reference(Variant::Single, 9)
        };
        (ck, generate(&spec).unwrap().dev)
    }

    #[test]
    fn batch_size_does_not_change_greedy_results() {
        let (ck, ex) = small();
        let a = evaluate(&ck, &ex, EvalMode::Greedy, 5).unwrap();
        let b = evaluate(&ck, &ex, EvalMode::Greedy, 100).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert!((a.loss - b.loss).abs() < 1e-12);
        assert!((a.policy_entropy - b.policy_entropy).abs() < 1e-12);
        assert!(a.policy_entropy > 0.0 && a.policy_entropy <= 3f64.ln() + 1e-12);
    }

    #[test]
    fn sampled_evaluation_is_reproducible() {
        let (ck, ex) = small();
        let a = evaluate_sampled(&ck, &ex, 3, 11, 16).unwrap();
        let b = evaluate_sampled(&ck, &ex, 3, 11, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accuracies.len(), 3);
    }

    #[test]
    fn empty_split_is_an_error() {
        let (ck, _) = small();
        assert!(evaluate(&ck, &[], EvalMode::Greedy, 10).is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
