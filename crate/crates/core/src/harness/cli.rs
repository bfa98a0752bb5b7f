//! Command-line surface. The binary only forwards `std::env::args` to [`run`].

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::commands::{cmd_eval, cmd_generate, cmd_probe, cmd_train, cmd_verify, ProbeRequest, Status};
use super::config::{ConfigLayer, ModelChoice, PathsLayer, Preset};
use crate::analysis::{ProbeTarget, SuiteOptions};
use crate::autodiff::Fault;
use crate::data::{DatasetSpec, Variant};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dynskip", version, about = "LSTM with dynamic skip connections: data, training and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a number-prediction dataset.
    Generate(GenerateArgs),
    /// Train a model and write its best checkpoint and NDJSON log.
    Train(TrainArgs),
    /// Report dev and test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Write gradient-norm profiles of one or more checkpoints as CSV.
    Probe(ProbeArgs),
    /// Run the property suite (finite differences, enumeration, equivalence, invariants).
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_variant)]
    pub task: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub train: usize,
    #[arg(long, default_value_t = 10_000)]
    pub dev: usize,
    #[arg(long, default_value_t = 10_000)]
    pub test: usize,
    /// Sequence length other than the task's own (11 or 21).
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Output directory [default: data/<task>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with any subset of the run fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_parser = parse_variant)]
    pub task: Option<Variant>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Maximum skip.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl TrainArgs {
    pub fn flag_layer(&self) -> ConfigLayer {
        let paths = (self.data.is_some() || self.checkpoint.is_some() || self.log.is_some()).then(|| PathsLayer {
            data: self.data.clone(),
            checkpoint: self.checkpoint.clone(),
            log: self.log.clone(),
        });
        ConfigLayer {
            task: self.task,
            model: self.model,
            k: self.k,
            lambda: self.lambda,
            hidden_size: self.hidden_size,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            clip_norm: self.clip_norm,
            eval_every: self.eval_every,
            patience: self.patience,
            train_size: self.train_size,
            paths,
        }
    }

    /// Preset, then config file, then flags.
    pub fn layers(&self) -> Result<ConfigLayer> {
        let mut layer = self.preset.map(ConfigLayer::preset).unwrap_or_default();
        if let Some(path) = &self.config {
            layer = layer.overlay(&ConfigLayer::from_file(path)?);
        }
        Ok(layer.overlay(&self.flag_layer()))
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also average this many evaluations with sampled skips.
    #[arg(long, default_value_t = 0)]
    pub sampled: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Checkpoint as TAG=PATH; repeat to compare models. Ratios are relative to the first.
    #[arg(long = "checkpoint", value_parser = parse_tagged, required = true)]
    pub checkpoints: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub data: PathBuf,
    /// Test examples averaged per profile.
    #[arg(long, default_value_t = 500)]
    pub examples: usize,
    /// Number of leading time steps profiled.
    #[arg(long, default_value_t = crate::analysis::DEFAULT_PROBE_STEPS)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "hidden")]
    pub target: ProbeTarget,
    /// Where to write the CSV [default: standard output].
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Leading steps averaged in the ratio report.
    #[arg(long, default_value_t = 5)]
    pub early: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Break the sigmoid backward rule to show that the checks catch it.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_tagged(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((tag, path)) if !tag.is_empty() && !path.is_empty() => Ok((tag.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected TAG=PATH, got {s:?}")),
    }
}

/// Executes one parsed command.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<Status> {
    match &cli.command {
        Command::Generate(a) => {
            let spec = DatasetSpec {
                seq_len: a.seq_len.unwrap_or(a.task.default_len()),
                train: a.train,
                dev: a.dev,
                test: a.test,
                allow_custom_len: a.seq_len.is_some(),
                ..DatasetSpec::reference(a.task, a.seed)
            };
            let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("data").join(a.task.name()));
            cmd_generate(&spec, &dir, out)?;
        }
        Command::Train(a) => {
            cmd_train(&a.layers()?.resolve()?, out)?;
        }
        Command::Eval(a) => {
            cmd_eval(&a.checkpoint, &a.data, a.sampled, a.seed, out)?;
        }
        Command::Probe(a) => {
            let req = ProbeRequest {
                checkpoints: a.checkpoints.clone(),
                data: a.data.clone(),
                examples: a.examples,
                steps: a.steps,
                target: a.target,
                csv: a.csv.clone(),
                early: a.early,
            };
            cmd_probe(&req, out)?;
        }
        Command::Verify(a) => {
            let opts = SuiteOptions {
                seed: a.seed,
                fault: a.inject_fault.then_some(Fault::SigmoidBackward),
                ..SuiteOptions::default()
            };
            return cmd_verify(&opts, a.json.as_deref(), out);
        }
    }
    Ok(Status::Ok)
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(Status::Ok) => 0,
        Ok(Status::Failed) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
