//! The property suite run by `dynskip verify`: exact oracles at toy scale.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::enumerate::{entropy_ascent, enumerate_trajectories, monte_carlo_check, toy_model, Reward};
use super::fd::{model_gradient_check, FdOptions};
use super::ops::op_checks;
use super::probe::{grad_norm_probe, ProbeTarget};
use super::reference::{plain_equivalence, PlainLstm, Reduction};
use crate::autodiff::{Fault, Tape};
use crate::data::{encode_batch, generate, label_oracle, read_dataset, write_dataset, DatasetSpec, Example, Variant};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelKind, ModelParams, SkipConfig, StateRing};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::mean_entropy;

/// Grouping of checks, matching the categories of the acceptance suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FiniteDifference,
    Estimator,
    Equivalence,
    Dataset,
    Invariants,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub category: Category,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Corrupts the analytic gradient of the differentiation checks.
    pub fault: Option<Fault>,
    pub mc_samples: usize,
    pub randomized_cases: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            fault: None,
            mc_samples: 200_000,
            randomized_cases: 1_000,
        }
    }
}

/// The three worked examples: two single-skip and one double-skip.
pub const WORKED_EXAMPLES: [(&[usize], Variant, usize); 3] = [
    (&[8, 5, 1, 7, 4, 3], Variant::Single, 7),
    (&[2, 6, 4, 1, 3, 2], Variant::Single, 4),
    (&[8, 5, 1, 7, 1, 3, 3, 4, 7, 9, 4], Variant::Double, 5),
];

fn timed(
    out: &mut Vec<CheckResult>,
    category: Category,
    name: &str,
    check: impl FnOnce() -> Result<(bool, String)>,
) {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    out.push(CheckResult {
        category,
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    });
}

/// Runs every check. Never stops early: a failing or erroring check is
/// recorded and the rest still run.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let seed = opts.seed;

    timed(&mut out, Category::FiniteDifference, "autodiff ops vs finite differences", || {
        let reports = op_checks(seed, opts.fault)?;
        let worst = reports
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .expect("op list is not empty");
        let failing: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
        Ok((
            failing.is_empty(),
            format!(
                "{} ops, worst {} at {:.2e} (tol 1e-4){}",
                reports.len(),
                worst.0,
                worst.1.max_rel_error,
                if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
            ),
        ))
    });

    timed(&mut out, Category::FiniteDifference, "full model gradients vs finite differences", || {
        let (batch, actions) = fd_batch(seed)?;
        let refs: Vec<&Example> = batch.iter().collect();
        let mut worst: f64 = 0.0;
        for kind in [ModelKind::Dynskip, ModelKind::Attention] {
            let ck = fd_model(kind, seed)?;
            let r = model_gradient_check(&ck, &refs, &actions, opts.fault, &FdOptions { seed, ..FdOptions::default() })?;
            worst = worst.max(r.max_rel_error);
        }
        Ok((worst < 1e-4, format!("dynskip and attention, worst {worst:.2e} (tol 1e-4)")))
    });

    timed(&mut out, Category::FiniteDifference, "corrupted backward rule is detected", || {
        let (batch, actions) = fd_batch(seed)?;
        let refs: Vec<&Example> = batch.iter().collect();
        let ck = fd_model(ModelKind::Dynskip, seed)?;
        let r = model_gradient_check(
            &ck,
            &refs,
            &actions,
            Some(Fault::SigmoidBackward),
            &FdOptions { seed, ..FdOptions::default() },
        )?;
        Ok((r.max_rel_error > 1e-2, format!("error with faulty sigmoid {:.2e} (must exceed 1e-2)", r.max_rel_error)))
    });

    let toy = toy_model(2, 3, seed.wrapping_add(5), 20.0);
    let toy_example = Example { tokens: vec![4, 7, 1], label: 7 };

    timed(&mut out, Category::Estimator, "enumeration oracle T=3 K=2", || {
        let r = enumerate_trajectories(toy.as_ref().map_err(clone_err)?, &toy_example, Reward::Model)?;
        let ok = r.max_rel_error < 1e-6 && (r.probability_sum - 1.0).abs() < 1e-10;
        Ok((
            ok,
            format!(
                "{} trajectories, Σq-1 = {:.1e}, rel. error {:.2e} (tol 1e-6)",
                r.trajectories,
                r.probability_sum - 1.0,
                r.max_rel_error
            ),
        ))
    });

    timed(&mut out, Category::Estimator, "sampled estimator mean within 3 SE", || {
        let r = monte_carlo_check(
            toy.as_ref().map_err(clone_err)?,
            &toy_example,
            Reward::Model,
            opts.mc_samples,
            20,
            seed,
        )?;
        let zs: Vec<String> = r.projections.iter().map(|p| format!("{:.2}", p.z)).collect();
        Ok((r.max_z() <= 3.0, format!("{} samples, |z| = [{}]", r.samples, zs.join(", "))))
    });

    timed(&mut out, Category::Estimator, "zero reward drives the policy to uniform", || {
        let trace = entropy_ascent(toy.as_ref().map_err(clone_err)?, &toy_example, 0.01, 4000)?;
        let monotone = trace.windows(2).all(|w| w[1] >= w[0] - 1e-12);
        let gap = 2f64.ln() - trace.last().copied().unwrap_or(0.0);
        Ok((
            monotone && gap < 1e-3,
            format!("H/T {:.4} -> {:.6}, ln K gap {gap:.1e}, monotone {monotone}", trace[0], trace[trace.len() - 1]),
        ))
    });

    timed(&mut out, Category::Equivalence, "K=1 λ=0 matches the plain LSTM reference (100 steps)", || {
        let r = plain_equivalence(seed, 100, 4, 16)?;
        Ok((r.identical(), format!("{} values compared, {} differ", r.compared, r.mismatches)))
    });

    timed(&mut out, Category::Equivalence, "gradient probe matches the reference", probe_equivalence);

    timed(&mut out, Category::Dataset, "worked examples", || {
        let bad: Vec<String> = WORKED_EXAMPLES
            .iter()
            .filter(|(t, v, want)| label_oracle(t, *v) != Ok(*want))
            .map(|(t, _, _)| format!("{t:?}"))
            .collect();
        Ok((bad.is_empty(), if bad.is_empty() { "3 of 3".into() } else { format!("wrong: {}", bad.join("; ")) }))
    });

    timed(&mut out, Category::Dataset, "generated labels pass the oracle after a file round trip", || {
        dataset_round_trip(seed)
    });

    timed(&mut out, Category::Invariants, "softmax invariants", || Ok(softmax_invariants(seed, opts.randomized_cases)));
    timed(&mut out, Category::Invariants, "entropy invariants", || Ok(entropy_invariants(seed, opts.randomized_cases)));
    timed(&mut out, Category::Invariants, "state ring invariants", || Ok(ring_invariants(seed, opts.randomized_cases)));
    out
}

fn clone_err(e: &Error) -> Error {
    Error::contract(e.to_string())
}

fn fd_model(kind: ModelKind, seed: u64) -> Result<Checkpoint> {
    let cfg = SkipConfig {
        max_skip: 3,
        lambda: 0.5,
        hidden_size: 5,
        input_size: 10,
        num_classes: 10,
    };
    let mut params = ModelParams::init(cfg, seed)?;
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|w| *w *= 10.0);
    }
    Ok(Checkpoint::new(kind, params))
}

fn fd_batch(seed: u64) -> Result<(Vec<Example>, Vec<Vec<usize>>)> {
    let spec = DatasetSpec {
        seq_len: 5,
        allow_custom_len: true,
        train: 3,
        dev: 1,
        test: 1,
        ..DatasetSpec::reference(Variant::Single, seed)
    };
    let batch = generate(&spec)?.train;
    let mut r = rng::stream(seed, "fd.actions");
    let actions = (0..5).map(|_| (0..3).map(|_| r.gen_range(1..=3)).collect()).collect();
    Ok((batch, actions))
}

fn probe_equivalence() -> Result<(bool, String)> {
    let spec = DatasetSpec {
        train: 64,
        dev: 1,
        test: 1,
        ..DatasetSpec::reference(Variant::Double, 11)
    };
    let examples = generate(&spec)?.train;
    let cfg = SkipConfig::plain_lstm(24, 10, 10);
    let mut params = ModelParams::init(cfg, 11)?;
    params.tensors_mut().iter_mut().for_each(|t| t.data.iter_mut().for_each(|w| *w *= 8.0));
    let ck = Checkpoint::new(ModelKind::Dynskip, params);
    let profile = grad_norm_probe(&ck, &examples, 20, ProbeTarget::Hidden, "plain", examples.len())?;

    let refs: Vec<&Example> = examples.iter().collect();
    let inputs = encode_batch(&refs)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let reference = PlainLstm::new(&ck.params);
    let fwd = reference.forward(&inputs)?;
    let bwd = reference.backward(&fwd, &labels, Reduction::Sum);
    let hidden = cfg.hidden_size;
    let raw: Vec<f64> = bwd.dh[..20]
        .iter()
        .map(|g| {
            (0..examples.len())
                .map(|r| g[r * hidden..(r + 1) * hidden].iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / examples.len() as f64
        })
        .collect();
    let same = raw == profile.raw;
    Ok((same, format!("20 steps over {} examples, identical {same}", examples.len())))
}

fn dataset_round_trip(seed: u64) -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!("dynskip-verify-{}-{seed}", std::process::id()));
    let mut total = 0;
    let mut agree = 0;
    let result = (|| {
        for variant in [Variant::Single, Variant::Double] {
            let spec = DatasetSpec {
                train: 2000,
                dev: 500,
                test: 500,
                ..DatasetSpec::reference(variant, seed)
            };
            let ds = generate(&spec)?;
            for ex in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
                total += 1;
                if label_oracle(&ex.tokens, variant) == Ok(ex.label) {
                    agree += 1;
                }
            }
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_dataset(&dir, &ds)?;
            // reading re-validates every label against the oracle
            if read_dataset(&dir)? != ds {
                return Err(Error::contract("dataset changed in a file round trip"));
            }
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result?;
    Ok((agree == total, format!("{agree} of {total} labels agree; files re-read intact")))
}

fn softmax_invariants(seed: u64, cases: usize) -> (bool, String) {
    let mut r = rng::stream(seed, "invariants.softmax");
    let mut failures = 0;
    for _ in 0..cases {
        let k = r.gen_range(1..=12);
        let logits: Vec<f64> = (0..k).map(|_| r.gen_range(-15.0..15.0)).collect();
        let shift = r.gen_range(-50.0..50.0);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(logits.clone()));
        let b = tape.constant(Tensor::vector(logits.iter().map(|v| v + shift).collect()));
        let (Ok(pa), Ok(pb)) = (tape.softmax(a), tape.softmax(b)) else {
            failures += 1;
            continue;
        };
        let (pa, pb) = (&tape.value(pa).data, &tape.value(pb).data);
        let sum: f64 = pa.iter().sum();
        let in_range = pa.iter().all(|p| *p > 0.0 && *p <= 1.0) && (k > 1) == pa.iter().all(|p| *p < 1.0);
        let shifted = pa.iter().zip(pb).all(|(x, y)| (x - y).abs() < 1e-12);
        let ordered = (0..k).all(|i| (0..k).all(|j| logits[i] <= logits[j] || pa[i] >= pa[j]));
        if (sum - 1.0).abs() >= 1e-12 || !in_range || !shifted || !ordered {
            failures += 1;
        }
    }
    (failures == 0, format!("{cases} cases, {failures} failures"))
}

fn entropy_invariants(seed: u64, cases: usize) -> (bool, String) {
    let mut r = rng::stream(seed, "invariants.entropy");
    let mut failures = 0;
    for _ in 0..cases {
        let k = r.gen_range(1..=12);
        let scale = r.gen_range(0.0..20.0);
        let logits: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[logits]).expect("one row"));
        let Ok(p) = tape.softmax(x) else {
            failures += 1;
            continue;
        };
        let h = mean_entropy(tape.value(p));
        let uniform = mean_entropy(&Tensor::from_rows(&[vec![1.0 / k as f64; k]]).expect("one row"));
        let ln_k = (k as f64).ln();
        if !(h >= -1e-15 && h <= ln_k + 1e-12 && (uniform - ln_k).abs() < 1e-12) {
            failures += 1;
        }
    }
    (failures == 0, format!("{cases} cases, {failures} failures"))
}

fn ring_invariants(seed: u64, cases: usize) -> (bool, String) {
    let mut r = rng::stream(seed, "invariants.ring");
    let mut failures = 0;
    for _ in 0..cases {
        let cap = r.gen_range(1..=12);
        let pushes = r.gen_range(0..40);
        let mut ring = StateRing::new(cap, -1i64);
        let mut model: VecDeque<i64> = std::iter::repeat_n(-1, cap).collect();
        let mut ok = true;
        for i in 0..pushes {
            ring.push(i);
            model.push_front(i);
            model.truncate(cap);
            ok &= ring.len() == cap
                && ring.get(0).is_none()
                && ring.get(cap + 1).is_none()
                && (1..=cap).all(|k| ring.get(k) == model.get(k - 1))
                && ring.iter().copied().eq(model.iter().copied());
        }
        if !ok {
            failures += 1;
        }
    }
    (failures == 0, format!("{cases} cases, {failures} failures"))
}

/// One line per check, then a summary line.
pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let pad = width - r.name.chars().count();
        s.push_str(&format!(
            "{} {}{}  {:>6.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            " ".repeat(pad),
            r.seconds,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes_everything() {
        let opts = SuiteOptions {
            mc_samples: 20_000,
            randomized_cases: 200,
            ..SuiteOptions::default()
        };
        let results = run_suite(&opts);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{}", render_table(&results));
    }
}
