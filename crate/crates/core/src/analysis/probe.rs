//! Average `‖∂L_T/∂h_t‖` over examples, per time step.

use std::io::Write;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::data::{encode_batch, Example};
use crate::error::{Error, Result};
use crate::model::{run, ActionMode, Checkpoint};
use crate::train::per_example_ce;

pub const DEFAULT_PROBE_STEPS: usize = 20;
pub const CSV_HEADER: &str = "t,raw_norm,normalized_norm,model_tag";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Hidden,
    Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradNormProfile {
    pub model_tag: String,
    pub target: ProbeTarget,
    pub examples: usize,
    /// Mean per-example norm at `t = 1..=T_probe`.
    pub raw: Vec<f64>,
    /// `raw` divided by its sum.
    pub normalized: Vec<f64>,
}

impl GradNormProfile {
    /// Mean normalized norm over the first `steps` probed positions.
    pub fn early_mean(&self, steps: usize) -> f64 {
        let n = steps.min(self.normalized.len());
        self.normalized[..n].iter().sum::<f64>() / n as f64
    }
}

/// Runs `examples` through the model in greedy mode, backpropagates the
/// terminal cross-entropy, and averages the per-example gradient norm of the
/// hidden (or cell) state at each of the first `t_probe` steps.
pub fn grad_norm_probe(
    ck: &Checkpoint,
    examples: &[Example],
    t_probe: usize,
    target: ProbeTarget,
    model_tag: &str,
    batch_size: usize,
) -> Result<GradNormProfile> {
    if examples.is_empty() || t_probe == 0 || batch_size == 0 {
        return Err(Error::contract("probe needs examples, steps and a positive batch size"));
    }
    if let Some(short) = examples.iter().find(|e| e.len() < t_probe) {
        return Err(Error::contract(format!(
            "sequence of length {} is shorter than T_probe = {t_probe}",
            short.len()
        )));
    }
    let mut sums = vec![0.0; t_probe];
    let mut tape = Tape::new();
    for chunk in examples.chunks(batch_size) {
        tape.clear();
        let bound = ck.params.bind(&mut tape);
        let refs: Vec<&Example> = chunk.iter().collect();
        let inputs = encode_batch(&refs)?;
        let pass = run(&mut tape, &bound, ck.kind, ck.config(), &inputs, ActionMode::Greedy)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        // summed, so every row's gradient is that example's own
        let ce = per_example_ce(&mut tape, pass.logits, &labels)?;
        let loss = tape.sum(ce);
        tape.backward(loss)?;
        for (t, sum) in sums.iter_mut().enumerate() {
            let state = pass.states[t];
            let var = match target {
                ProbeTarget::Hidden => state.h,
                ProbeTarget::Cell => state.c,
            };
            let g = tape.grad_or_zeros(var);
            let (rows, _) = g.as_matrix();
            *sum += (0..rows)
                .map(|r| g.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>();
        }
    }
    let n = examples.len() as f64;
    let raw: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::contract(format!("gradient norms sum to {total}; nothing to normalize")));
    }
    Ok(GradNormProfile {
        model_tag: model_tag.to_string(),
        target,
        examples: examples.len(),
        normalized: raw.iter().map(|r| r / total).collect(),
        raw,
    })
}

/// Writes profiles as CSV rows grouped by model tag.
pub fn write_csv(out: &mut dyn Write, profiles: &[GradNormProfile]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in profiles {
        for (i, (raw, norm)) in p.raw.iter().zip(&p.normalized).enumerate() {
            writeln!(out, "{},{:e},{:e},{}", i + 1, raw, norm, p.model_tag)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec, Variant};
    use crate::model::{ModelKind, ModelParams, SkipConfig};

    fn data() -> Vec<Example> {
        let spec = DatasetSpec {
            train: 40,
            dev: 1,
            test: 1,
            ..DatasetSpec::reference(Variant::Double, 3)
        };
        generate(&spec).unwrap().train
    }

    fn model(k: usize, lambda: f64) -> Checkpoint {
        let cfg = SkipConfig {
            max_skip: k,
            lambda,
            hidden_size: 16,
            input_size: 10,
            num_classes: 10,
        };
        Checkpoint::new(ModelKind::Dynskip, ModelParams::init(cfg, 2).unwrap())
    }

    #[test]
    fn profile_is_normalized_and_batch_invariant() {
        let ex = data();
        let ck = model(10, 0.5);
        let a = grad_norm_probe(&ck, &ex, 20, ProbeTarget::Hidden, "a", 7).unwrap();
        let b = grad_norm_probe(&ck, &ex, 20, ProbeTarget::Hidden, "a", 40).unwrap();
        assert!((a.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.raw.iter().all(|r| *r >= 0.0));
        for (x, y) in a.raw.iter().zip(&b.raw) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn skip_edges_reach_early_steps() {
        let ex = data();
        for target in [ProbeTarget::Hidden, ProbeTarget::Cell] {
            let p = grad_norm_probe(&model(10, 1.0), &ex, 20, target, "skip", 40).unwrap();
            assert!(p.raw[..5].iter().all(|r| *r > 0.0), "{target:?}: {:?}", p.raw);
        }
    }

    #[test]
    fn short_sequences_are_rejected() {
        let ex = data();
        assert!(grad_norm_probe(&model(2, 0.5), &ex, 22, ProbeTarget::Hidden, "x", 10).is_err());
    }

    #[test]
    fn csv_groups_by_tag() {
        let ex = data();
        let a = grad_norm_probe(&model(10, 0.5), &ex, 20, ProbeTarget::Hidden, "dyn", 40).unwrap();
        let b = grad_norm_probe(&model(1, 0.0), &ex, 20, ProbeTarget::Hidden, "plain", 40).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[a, b]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 41);
        for tag in ["dyn", "plain"] {
            let total: f64 = lines[1..]
                .iter()
                .map(|l| l.split(',').collect::<Vec<_>>())
                .filter(|f| f[3] == tag)
                .map(|f| f[2].parse::<f64>().unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
