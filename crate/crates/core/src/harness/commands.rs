//! The five commands. Each writes its human-readable report to `out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::RunConfig;
use crate::analysis::{grad_norm_probe, render_table, run_suite, write_csv, GradNormProfile, ProbeTarget, SuiteOptions};
use crate::data::{label_oracle, read_dataset, write_dataset, Dataset, DatasetSpec, NUM_DIGITS};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams};
use crate::train::{evaluate, evaluate_sampled, train, EvalMode, LogRecord, TrainOutcome, DEFAULT_EVAL_BATCH};

/// Outcome of a command that ran to completion; `Failed` maps to exit status 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

/// Generates the three splits, checks every label against the oracle and writes them to `dir`.
pub fn cmd_generate(spec: &DatasetSpec, dir: &Path, out: &mut dyn Write) -> Result<Dataset> {
    let ds = crate::data::generate(spec)?;
    let mut agree = 0;
    let total = ds.train.len() + ds.dev.len() + ds.test.len();
    for ex in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
        if label_oracle(&ex.tokens, spec.variant) == Ok(ex.label) {
            agree += 1;
        }
    }
    if agree != total {
        return Err(Error::contract(format!("{} generated labels disagree with the oracle", total - agree)));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_dataset(dir, &ds)?;
    say(
        out,
        format_args!(
            "wrote {} task (T={}) to {}: train {}, dev {}, test {}; oracle agreement {agree}/{total} (100%)\n",
            spec.variant.name(),
            spec.seq_len,
            dir.display(),
            ds.train.len(),
            ds.dev.len(),
            ds.test.len()
        ),
    )?;
    Ok(ds)
}

fn load_task_data(cfg: &RunConfig) -> Result<Dataset> {
    let mut ds = read_dataset(&cfg.paths.data)?;
    if ds.spec.variant != cfg.task {
        return Err(Error::Config(format!(
            "{} holds the {} task, but the run asks for {}",
            cfg.paths.data.display(),
            ds.spec.variant.name(),
            cfg.task.name()
        )));
    }
    if let Some(n) = cfg.train_size {
        if n > ds.train.len() {
            return Err(Error::Config(format!("train_size {n} exceeds the {} available examples", ds.train.len())));
        }
        ds.train.truncate(n);
    }
    Ok(ds)
}

fn write_line(w: &mut impl Write, path: &Path, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(io_err(path))
}

/// Result of `cmd_train`, for callers that want more than the files.
pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub test: LogRecord,
}

/// Trains from a resolved config, writing the NDJSON log and the best checkpoint.
///
/// The log opens with `{"config": ...}` and closes with a `test` record
/// scored by the best-dev checkpoint.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainReport> {
    let ds = load_task_data(cfg)?;
    let initial = Checkpoint::new(cfg.model.kind(), ModelParams::init(cfg.skip_config(), cfg.seed)?);
    let log_path = cfg.paths.log.as_path();
    let mut log = create(log_path)?;
    write_line(&mut log, log_path, &json!({ "config": cfg }))?;
    let outcome = train(initial, &ds.train, &ds.dev, &cfg.train_config(), &mut |r| {
        write_line(&mut log, log_path, r)?;
        log.flush().map_err(io_err(log_path))
    })?;

    let report = evaluate(&outcome.best, &ds.test, EvalMode::Greedy, DEFAULT_EVAL_BATCH)?;
    let last = outcome.records.last();
    let test = LogRecord {
        step: outcome.best_step,
        epoch: last.map_or(0, |r| r.epoch),
        split: "test".into(),
        loss: report.loss,
        accuracy: report.accuracy,
        policy_entropy: report.policy_entropy,
        wall_ms: last.map_or(0, |r| r.wall_ms),
    };
    write_line(&mut log, log_path, &test)?;
    log.flush().map_err(io_err(log_path))?;
    ensure_parent(&cfg.paths.checkpoint)?;
    outcome.best.save(&cfg.paths.checkpoint)?;
    say(
        out,
        format_args!(
            "{} on {} (K={}, lambda={}): {} steps{}; best dev {:.4} at step {}; test {:.4}\ncheckpoint {}\nlog {}\n",
            cfg.model.name(),
            cfg.task.name(),
            cfg.k,
            cfg.lambda,
            outcome.steps,
            if outcome.stopped_early { " (stopped early)" } else { "" },
            outcome.best_dev_accuracy,
            outcome.best_step,
            test.accuracy,
            cfg.paths.checkpoint.display(),
            log_path.display()
        ),
    )?;
    Ok(TrainReport { outcome, test })
}

fn check_dimensions(ck: &Checkpoint) -> Result<()> {
    let c = ck.config();
    if c.input_size != NUM_DIGITS || c.num_classes != NUM_DIGITS {
        return Err(Error::contract(format!(
            "checkpoint expects {} inputs and {} classes; the digit tasks use {NUM_DIGITS} and {NUM_DIGITS}",
            c.input_size, c.num_classes
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub dev: f64,
    pub test: f64,
    pub sampled_dev: Option<(f64, f64)>,
    pub sampled_test: Option<(f64, f64)>,
}

/// Greedy dev and test accuracy, plus mean and std over `sampled` stochastic evaluations.
pub fn cmd_eval(checkpoint: &Path, data: &Path, sampled: usize, seed: u64, out: &mut dyn Write) -> Result<EvalSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    check_dimensions(&ck)?;
    let ds = read_dataset(data)?;
    let dev = evaluate(&ck, &ds.dev, EvalMode::Greedy, DEFAULT_EVAL_BATCH)?;
    let test = evaluate(&ck, &ds.test, EvalMode::Greedy, DEFAULT_EVAL_BATCH)?;
    say(out, format_args!("dev  accuracy {:.4} ({} examples, greedy)\n", dev.accuracy, dev.examples))?;
    say(out, format_args!("test accuracy {:.4} ({} examples, greedy)\n", test.accuracy, test.examples))?;
    let mut summary = EvalSummary {
        dev: dev.accuracy,
        test: test.accuracy,
        sampled_dev: None,
        sampled_test: None,
    };
    if sampled > 0 {
        let d = evaluate_sampled(&ck, &ds.dev, sampled, seed, DEFAULT_EVAL_BATCH)?;
        let t = evaluate_sampled(&ck, &ds.test, sampled, seed, DEFAULT_EVAL_BATCH)?;
        say(out, format_args!("dev  accuracy {:.4} ± {:.4} (sampled, {sampled} runs)\n", d.mean, d.std))?;
        say(out, format_args!("test accuracy {:.4} ± {:.4} (sampled, {sampled} runs)\n", t.mean, t.std))?;
        summary.sampled_dev = Some((d.mean, d.std));
        summary.sampled_test = Some((t.mean, t.std));
    }
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct ProbeRequest {
    /// `(tag, checkpoint path)` pairs, one CSV group each.
    pub checkpoints: Vec<(String, PathBuf)>,
    pub data: PathBuf,
    pub examples: usize,
    pub steps: usize,
    pub target: ProbeTarget,
    /// CSV destination; `None` writes the CSV to `out`.
    pub csv: Option<PathBuf>,
    /// Time steps averaged for the ratio report.
    pub early: usize,
}

/// Gradient-norm profiles on the test split, with early-step ratios against the first checkpoint.
pub fn cmd_probe(req: &ProbeRequest, out: &mut dyn Write) -> Result<Vec<GradNormProfile>> {
    if req.checkpoints.is_empty() {
        return Err(Error::Config("probe needs at least one checkpoint".into()));
    }
    let ds = read_dataset(&req.data)?;
    let n = req.examples.min(ds.test.len());
    let mut profiles = Vec::new();
    for (tag, path) in &req.checkpoints {
        let ck = Checkpoint::load(path)?;
        check_dimensions(&ck)?;
        profiles.push(grad_norm_probe(&ck, &ds.test[..n], req.steps, req.target, tag, DEFAULT_EVAL_BATCH)?);
    }
    match &req.csv {
        Some(path) => {
            let mut f = create(path)?;
            write_csv(&mut f, &profiles).and_then(|_| f.flush()).map_err(io_err(path))?;
            say(out, format_args!("wrote {} profiles over {n} examples to {}\n", profiles.len(), path.display()))?;
        }
        None => write_csv(out, &profiles).map_err(|e| Error::io("<stdout>", e))?,
    }
    let base = &profiles[0];
    for p in &profiles {
        say(
            out,
            format_args!(
                "{}: mean normalized norm over t=1..{} is {:.4e} ({:.2}x {})\n",
                p.model_tag,
                req.early,
                p.early_mean(req.early),
                p.early_mean(req.early) / base.early_mean(req.early),
                base.model_tag
            ),
        )?;
    }
    Ok(profiles)
}

/// Runs the property suite and prints one line per check.
pub fn cmd_verify(opts: &SuiteOptions, json_path: Option<&Path>, out: &mut dyn Write) -> Result<Status> {
    let results = run_suite(opts);
    say(out, format_args!("{}", render_table(&results)))?;
    if let Some(path) = json_path {
        let mut f = create(path)?;
        serde_json::to_writer_pretty(&mut f, &results)?;
        f.flush().map_err(io_err(path))?;
    }
    Ok(if results.iter().all(|r| r.passed) { Status::Ok } else { Status::Failed })
}
