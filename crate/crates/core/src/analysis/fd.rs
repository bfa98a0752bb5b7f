//! Central finite differences against analytic gradients.

use rand::seq::index;
use serde::Serialize;

use crate::autodiff::{Fault, Tape};
use crate::data::{encode_batch, Example};
use crate::error::{Error, Result};
use crate::model::{run, ActionMode, Checkpoint, ModelKind, ParamId};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::EpisodeOutcome;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates checked per array; smaller arrays are checked in full.
    pub coords_per_array: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            coords_per_array: 50,
            floor: 1e-5,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrayError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub arrays: Vec<ArrayError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn checked(&self) -> usize {
        self.arrays.iter().map(|a| a.checked).sum()
    }
}

/// Compares `analytic[i]` with central differences of `loss_fn` around
/// `params[i]`. `loss_fn` must be deterministic in its argument; it is
/// evaluated twice at the base point and a mismatch is a contract error.
pub fn finite_diff_check(
    names: &[String],
    params: &[Tensor],
    analytic: &[Tensor],
    mut loss_fn: impl FnMut(&[Tensor]) -> Result<f64>,
    opts: &FdOptions,
) -> Result<FdReport> {
    if names.len() != params.len() || params.len() != analytic.len() {
        return Err(Error::contract("names, parameters and gradients must align"));
    }
    for (p, g) in params.iter().zip(analytic) {
        if p.shape != g.shape {
            return Err(Error::Shape {
                op: "finite_diff_check",
                left: p.shape.clone(),
                right: g.shape.clone(),
            });
        }
    }
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::contract(format!(
            "loss is not deterministic: {first} then {second}"
        )));
    }
    let mut sampler = rng::stream(opts.seed, "fd.coords");
    let mut work = params.to_vec();
    let mut arrays = Vec::with_capacity(params.len());
    for (i, name) in names.iter().enumerate() {
        let n = params[i].numel();
        let coords: Vec<usize> = if n <= opts.coords_per_array {
            (0..n).collect()
        } else {
            let mut c = index::sample(&mut sampler, n, opts.coords_per_array).into_vec();
            c.sort_unstable();
            c
        };
        let mut entry = ArrayError {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: coords.first().copied().unwrap_or(0),
        };
        for j in coords {
            let base = work[i].data[j];
            work[i].data[j] = base + opts.epsilon;
            let plus = loss_fn(&work)?;
            work[i].data[j] = base - opts.epsilon;
            let minus = loss_fn(&work)?;
            work[i].data[j] = base;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let err = relative_error(analytic[i].data[j], numeric, opts.floor);
            // NaN compares false, so a non-finite error is recorded explicitly
            if err > entry.max_rel_error || !err.is_finite() {
                entry.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                entry.worst_index = j;
            }
        }
        arrays.push(entry);
    }
    let max_rel_error = arrays.iter().map(|a| a.max_rel_error).fold(0.0, f64::max);
    Ok(FdReport {
        arrays,
        max_rel_error,
        tolerance: opts.tolerance,
    })
}

/// Which scalar a model-level check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPart {
    /// Mean cross-entropy.
    CrossEntropy,
    /// Mean `Σ_t log π(a_t)` of the fixed actions.
    LogPolicy,
}

/// Deterministic loss of a model on one batch with the skip actions held
/// fixed (greedy for the attention model), and its analytic gradient.
pub fn model_loss(
    tape: &mut Tape,
    ck: &Checkpoint,
    params: &[Tensor],
    batch: &[&Example],
    actions: &[Vec<usize>],
    part: LossPart,
) -> Result<(f64, Vec<Tensor>)> {
    tape.clear();
    let mut p = ck.params.clone();
    p.tensors_mut().clone_from_slice(params);
    let bound = p.bind(tape);
    let inputs = encode_batch(batch)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let mode = match ck.kind {
        ModelKind::Dynskip => ActionMode::Forced(actions),
        ModelKind::Attention => ActionMode::Greedy,
    };
    let pass = run(tape, &bound, ck.kind, ck.config(), &inputs, mode)?;
    let outcome = EpisodeOutcome::from_pass(tape, &pass, &labels)?;
    let term = match part {
        LossPart::CrossEntropy => outcome.ce_loss,
        LossPart::LogPolicy => outcome.sum_log_prob,
    };
    let loss = tape.mean(term);
    tape.backward(loss)?;
    Ok((tape.value(loss).item(), bound.grads(tape).0))
}

fn check_part(
    ck: &Checkpoint,
    batch: &[&Example],
    actions: &[Vec<usize>],
    fault: Option<Fault>,
    part: LossPart,
    ids: &[ParamId],
    opts: &FdOptions,
) -> Result<FdReport> {
    let mut tape = Tape::new();
    if let Some(f) = fault {
        tape.inject_fault(f);
    }
    let base = ck.params.tensors().to_vec();
    let (_, analytic) = model_loss(&mut tape, ck, &base, batch, actions, part)?;
    let names: Vec<String> = ids.iter().map(|id| id.name().to_string()).collect();
    let subset: Vec<Tensor> = ids.iter().map(|id| base[id.slot()].clone()).collect();
    let analytic: Vec<Tensor> = ids.iter().map(|id| analytic[id.slot()].clone()).collect();
    let mut probe = Tape::new();
    let mut full = base.clone();
    finite_diff_check(
        &names,
        &subset,
        &analytic,
        |sub| {
            for (id, t) in ids.iter().zip(sub) {
                full[id.slot()].data.copy_from_slice(&t.data);
            }
            model_loss(&mut probe, ck, &full, batch, actions, part).map(|(l, _)| l)
        },
        opts,
    )
}

/// Finite-difference check of every parameter array of a model on one batch.
///
/// The attention model is checked on its cross-entropy. In the dynamic-skip
/// model the agent sees a gradient-stopped hidden state, so its arrays are
/// checked on the log-policy term and all others on the cross-entropy.
/// `fault` corrupts the analytic gradient, for negative controls.
pub fn model_gradient_check(
    ck: &Checkpoint,
    batch: &[&Example],
    actions: &[Vec<usize>],
    fault: Option<Fault>,
    opts: &FdOptions,
) -> Result<FdReport> {
    let (agent, rest): (Vec<ParamId>, Vec<ParamId>) = ParamId::ALL.iter().partition(|id| id.is_agent());
    let parts = match ck.kind {
        ModelKind::Attention => vec![(LossPart::CrossEntropy, ParamId::ALL.to_vec())],
        ModelKind::Dynskip if ck.config().max_skip == 1 => vec![(LossPart::CrossEntropy, rest)],
        ModelKind::Dynskip => vec![(LossPart::CrossEntropy, rest), (LossPart::LogPolicy, agent)],
    };
    let mut arrays = Vec::new();
    for (part, ids) in parts {
        arrays.extend(check_part(ck, batch, actions, fault, part, &ids, opts)?.arrays);
    }
    let max_rel_error = arrays.iter().map(|a| a.max_rel_error).fold(0.0, f64::max);
    Ok(FdReport {
        arrays,
        max_rel_error,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec, Variant};
    use crate::model::{ModelParams, SkipConfig};
    use rand::Rng;

    #[test]
    fn quadratic_is_nearly_exact() {
        let p = vec![Tensor::vector(vec![0.5, -1.5, 2.0]), Tensor::scalar(3.0)];
        let g = vec![Tensor::vector(vec![1.0, -3.0, 4.0]), Tensor::scalar(6.0)];
        let names = vec!["a".to_string(), "b".to_string()];
        let loss = |p: &[Tensor]| Ok(p.iter().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>());
        let r = finite_diff_check(&names, &p, &g, loss, &FdOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.checked(), 4);
    }

    #[test]
    fn nondeterministic_loss_is_a_contract_error() {
        let p = vec![Tensor::scalar(1.0)];
        let mut r = rng::stream(0, "noise");
        let res = finite_diff_check(
            &["x".into()],
            &p,
            &p,
            |_| Ok(r.gen::<f64>()),
            &FdOptions::default(),
        );
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    fn toy(kind: ModelKind) -> (Checkpoint, Vec<Example>) {
        let cfg = SkipConfig {
            max_skip: 3,
            lambda: 0.5,
            hidden_size: 5,
            input_size: 10,
            num_classes: 10,
        };
        let mut params = ModelParams::init(cfg, 21).unwrap();
        // larger weights keep every gradient well above the error floor
        for t in params.tensors_mut() {
            t.data.iter_mut().for_each(|w| *w *= 10.0);
        }
        let spec = DatasetSpec {
            seq_len: 5,
            allow_custom_len: true,
            train: 3,
            dev: 1,
            test: 1,
            ..DatasetSpec::reference(Variant::Single, 2)
        };
        (Checkpoint::new(kind, params), generate(&spec).unwrap().train)
    }

    #[test]
    fn full_model_gradients_pass() {
        for kind in [ModelKind::Dynskip, ModelKind::Attention] {
            let (ck, ex) = toy(kind);
            let batch: Vec<&Example> = ex.iter().collect();
            let actions = vec![vec![1, 3, 2]; 5];
            let r = model_gradient_check(&ck, &batch, &actions, None, &FdOptions::default()).unwrap();
            assert!(r.passed(), "{kind:?}: {:#?}", r.arrays);
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let (ck, ex) = toy(ModelKind::Dynskip);
        let batch: Vec<&Example> = ex.iter().collect();
        let actions = vec![vec![2, 1, 3]; 5];
        let r = model_gradient_check(&ck, &batch, &actions, Some(Fault::SigmoidBackward), &FdOptions::default())
            .unwrap();
        assert!(r.max_rel_error > 1e-2, "{}", r.max_rel_error);
    }
}
