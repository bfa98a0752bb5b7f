use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalMode, DEFAULT_EVAL_BATCH};
use super::loss::{joint_loss, mean_entropy, EpisodeOutcome};
use super::optim::{Optimizer, OptimizerKind};
use crate::autodiff::Tape;
use crate::data::{encode_batch, Example};
use crate::error::{Error, Result};
use crate::model::{argmax, run, ActionMode, Checkpoint};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Seeds the `shuffle` and `actions` streams.
    pub seed: u64,
    /// Evaluate on dev every this many steps; `None` means once per epoch.
    pub eval_every: Option<usize>,
    /// Stop after this many evaluations without a dev improvement.
    pub patience: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 50,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            clip_norm: None,
            seed: 0,
            eval_every: None,
            patience: 5,
            eval_batch_size: DEFAULT_EVAL_BATCH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the NDJSON training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub policy_entropy: f64,
    pub wall_ms: u64,
}

/// Statistics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// The joint surrogate objective that was differentiated.
    pub loss: f64,
    /// Mean cross-entropy of the batch.
    pub cross_entropy: f64,
    pub correct: usize,
    pub examples: usize,
    pub policy_entropy: f64,
}

/// Forward, joint loss, backward, and one optimizer update on a minibatch.
///
/// Skip actions are sampled from `actions`. A non-finite loss or gradient
/// aborts with [`Error::NonFinite`] before any parameter is touched.
pub fn train_step(
    tape: &mut Tape,
    ck: &mut Checkpoint,
    batch: &[&Example],
    actions: &mut ChaCha8Rng,
    optimizer: &mut Optimizer,
    step_index: usize,
) -> Result<StepStats> {
    tape.clear();
    let bound = ck.params.bind(tape);
    let inputs = encode_batch(batch)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let non_finite = || Error::NonFinite {
        batch: step_index,
        norms: ck.params.norm_report(),
    };
    // softmax and log refuse non-finite input; during training that is the
    // same failure as a non-finite loss
    let forward = run(tape, &bound, ck.kind, ck.config(), &inputs, ActionMode::Sample(actions))
        .and_then(|pass| {
            let outcome = EpisodeOutcome::from_pass(tape, &pass, &labels)?;
            let loss = joint_loss(tape, &outcome)?;
            Ok((pass, outcome, loss))
        });
    let (pass, outcome, loss) = match forward {
        Err(Error::Domain { .. }) => return Err(non_finite()),
        other => other?,
    };
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(non_finite());
    }
    tape.backward(loss)?;
    let mut grads = bound.grads(tape);
    if !grads.is_finite() {
        return Err(non_finite());
    }
    let logits = tape.value(pass.logits);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(r, l)| argmax(logits.row(*r)) == **l)
        .count();
    let policy_entropy =
        pass.dists.iter().map(|d| mean_entropy(tape.value(*d))).sum::<f64>() / pass.dists.len() as f64;
    let cross_entropy = -outcome.reward.iter().sum::<f64>() / batch.len() as f64;
    optimizer.step(ck.params.tensors_mut(), &mut grads.0);
    Ok(StepStats {
        loss: loss_value,
        cross_entropy,
        correct,
        examples: batch.len(),
        policy_entropy,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev evaluation.
    pub best: Checkpoint,
    pub best_dev_accuracy: f64,
    pub best_step: u64,
    /// The parameters after the last step taken.
    pub last: Checkpoint,
    pub steps: u64,
    pub stopped_early: bool,
    pub records: Vec<LogRecord>,
}

#[derive(Default)]
struct Window {
    loss: f64,
    correct: usize,
    examples: usize,
    entropy: f64,
    batches: usize,
}

impl Window {
    fn add(&mut self, s: &StepStats) {
        self.loss += s.cross_entropy;
        self.correct += s.correct;
        self.examples += s.examples;
        self.entropy += s.policy_entropy;
        self.batches += 1;
    }
}

/// Minibatch training with a dev evaluation schedule and early stopping.
///
/// Every record is handed to `sink` as soon as it is produced. The best
/// checkpoint is the one with the highest greedy dev accuracy (earliest on ties).
pub fn train(
    initial: Checkpoint,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::contract("training needs non-empty train and dev splits"));
    }
    let started = Instant::now();
    let mut shuffle = rng::stream(cfg.seed, "shuffle");
    let mut actions = rng::stream(cfg.seed, "actions");
    let mut optimizer =
        Optimizer::new(cfg.optimizer, cfg.learning_rate).with_clip(cfg.clip_norm);
    let mut ck = initial;
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = ck.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_step = 0;
    let mut stale = 0;
    let mut step: u64 = 0;
    let mut records = Vec::new();
    let mut window = Window::default();
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let batches = order.chunks(cfg.batch_size).count();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|i| &train_set[*i]).collect();
            let stats = train_step(&mut tape, &mut ck, &batch, &mut actions, &mut optimizer, step as usize)?;
            window.add(&stats);
            step += 1;

            let due = match cfg.eval_every {
                Some(n) => step.is_multiple_of(n as u64) || (epoch == cfg.epochs && b + 1 == batches),
                None => b + 1 == batches,
            };
            if !due {
                continue;
            }
            let wall_ms = started.elapsed().as_millis() as u64;
            let train_rec = LogRecord {
                step,
                epoch,
                split: "train".into(),
                loss: window.loss / window.batches as f64,
                accuracy: window.correct as f64 / window.examples as f64,
                policy_entropy: window.entropy / window.batches as f64,
                wall_ms,
            };
            window = Window::default();
            let dev = evaluate(&ck, dev_set, EvalMode::Greedy, cfg.eval_batch_size)?;
            let dev_rec = LogRecord {
                step,
                epoch,
                split: "dev".into(),
                loss: dev.loss,
                accuracy: dev.accuracy,
                policy_entropy: dev.policy_entropy,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            for rec in [train_rec, dev_rec] {
                sink(&rec)?;
                records.push(rec);
            }
            if dev.accuracy > best_acc {
                best_acc = dev.accuracy;
                best = ck.clone();
                best_step = step;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_dev_accuracy: best_acc,
        best_step,
        last: ck,
        steps: step,
        stopped_early,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec, Variant};
    use crate::model::{ModelKind, ModelParams, SkipConfig};

    fn setup(kind: ModelKind) -> (Checkpoint, Vec<Example>, Vec<Example>) {
        let cfg = SkipConfig {
            max_skip: 4,
            lambda: 0.5,
            hidden_size: 12,
            input_size: 10,
            num_classes: 10,
        };
        let spec = DatasetSpec {
            train: 60,
            dev: 20,
            test: 1,
            ..DatasetSpec::reference(Variant::Single, 1)
        };
        let ds = generate(&spec).unwrap();
        (Checkpoint::new(kind, ModelParams::init(cfg, 2).unwrap()), ds.train, ds.dev)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_run() {
        for kind in [ModelKind::Dynskip, ModelKind::Attention] {
            let (ck, tr, dev) = setup(kind);
            let a = train(ck.clone(), &tr, &dev, &quick(), &mut |_| Ok(())).unwrap();
            let b = train(ck, &tr, &dev, &quick(), &mut |_| Ok(())).unwrap();
            assert_eq!(a.last, b.last);
            let strip = |r: &[LogRecord]| r.iter().map(|x| (x.step, x.loss, x.accuracy)).collect::<Vec<_>>();
            assert_eq!(strip(&a.records), strip(&b.records));
        }
    }

    #[test]
    fn records_follow_the_schedule() {
        let (ck, tr, dev) = setup(ModelKind::Dynskip);
        let mut seen = Vec::new();
        let out = train(ck, &tr, &dev, &quick(), &mut |r| {
            seen.push(r.clone());
            Ok(())
        })
        .unwrap();
        // 60 examples in batches of 16: 4 steps per epoch, one eval per epoch
        assert_eq!(out.steps, 8);
        let splits: Vec<(u64, &str)> = seen.iter().map(|r| (r.step, r.split.as_str())).collect();
        assert_eq!(splits, vec![(4, "train"), (4, "dev"), (8, "train"), (8, "dev")]);
        assert!(seen.iter().all(|r| r.loss.is_finite() && (0.0..=1.0).contains(&r.accuracy)));
        assert!(seen.iter().all(|r| r.policy_entropy <= 4f64.ln() + 1e-9));
    }

    #[test]
    fn patience_stops_training() {
        let (ck, tr, dev) = setup(ModelKind::Dynskip);
        let cfg = TrainConfig {
            epochs: 50,
            eval_every: Some(1),
            patience: 2,
            learning_rate: 1e-12,
            ..quick()
        };
        let out = train(ck, &tr, &dev, &cfg, &mut |_| Ok(())).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.best_step, 1);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let (mut ck, tr, dev) = setup(ModelKind::Dynskip);
        ck.params.tensors_mut()[0].data[0] = f64::NAN;
        match train(ck, &tr, &dev, &quick(), &mut |_| Ok(())) {
            Err(Error::NonFinite { batch, norms }) => {
                assert_eq!(batch, 0);
                assert!(norms.contains("NaN"), "{norms}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (ck, tr, dev) = setup(ModelKind::Dynskip);
        let cfg = TrainConfig { batch_size: 0, ..quick() };
        assert!(matches!(train(ck, &tr, &dev, &cfg, &mut |_| Ok(())), Err(Error::Config(_))));
    }
}
