//! Run configuration: defaults, presets, JSON files and flags, in rising precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Variant;
use crate::error::{Error, Result};
use crate::model::{ModelKind, SkipConfig};
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModelChoice {
    Dynskip,
    Attention,
    PlainLstm,
}

impl ModelChoice {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Attention => ModelKind::Attention,
            ModelChoice::Dynskip | ModelChoice::PlainLstm => ModelKind::Dynskip,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Dynskip => "dynskip",
            ModelChoice::Attention => "attention",
            ModelChoice::PlainLstm => "plain_lstm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 30,000 training examples, 15 epochs.
    Desk,
    /// The whole training split, 30 epochs.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Directory holding train.txt, dev.txt and test.txt.
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// The effective configuration of a training run, echoed into its log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Variant,
    pub model: ModelChoice,
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub hidden_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub eval_every: Option<usize>,
    /// Evaluations without dev improvement before stopping; `None` never stops.
    pub patience: Option<usize>,
    /// Use only the first this many training examples; `None` uses them all.
    pub train_size: Option<usize>,
    pub paths: Paths,
}

/// A partial configuration. Every layer (preset, file, flags) is one of these.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub task: Option<Variant>,
    pub model: Option<ModelChoice>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub hidden_size: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub clip_norm: Option<f64>,
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
    pub train_size: Option<usize>,
    pub paths: Option<PathsLayer>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsLayer {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl ConfigLayer {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => ConfigLayer {
                train_size: Some(30_000),
                epochs: Some(15),
                ..ConfigLayer::default()
            },
            Preset::Full => ConfigLayer {
                epochs: Some(30),
                ..ConfigLayer::default()
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ConfigLayer) -> Self {
        overlay!(self, top; task, model, k, lambda, hidden_size, lr, epochs, batch_size, seed,
            clip_norm, eval_every, patience, train_size);
        if let Some(p) = &top.paths {
            let mut paths = self.paths.take().unwrap_or_default();
            overlay!(paths, p; data, checkpoint, log);
            self.paths = Some(paths);
        }
        self
    }

    /// Fills the remaining gaps with defaults and checks consistency.
    pub fn resolve(&self) -> Result<RunConfig> {
        let task = self.task.ok_or_else(|| Error::Config("a task (single or double) is required".into()))?;
        let model = self.model.unwrap_or(ModelChoice::Dynskip);
        let (k, lambda) = match model {
            ModelChoice::PlainLstm => {
                if self.k.is_some_and(|k| k != 1) || self.lambda.is_some_and(|l| l != 0.0) {
                    return Err(Error::Config(format!(
                        "plain_lstm fixes K=1 and lambda=0, got K={:?} lambda={:?}",
                        self.k, self.lambda
                    )));
                }
                (1, 0.0)
            }
            _ => (self.k.unwrap_or(10), self.lambda.unwrap_or(0.5)),
        };
        let seed = self.seed.unwrap_or(0);
        let tag = format!("{}-{}-seed{seed}", model.name(), task.name());
        let paths = self.paths.clone().unwrap_or_default();
        let cfg = RunConfig {
            task,
            model,
            k,
            lambda,
            hidden_size: self.hidden_size.unwrap_or(200),
            lr: self.lr.unwrap_or(0.001),
            epochs: self.epochs.unwrap_or(15),
            batch_size: self.batch_size.unwrap_or(50),
            seed,
            clip_norm: self.clip_norm,
            eval_every: self.eval_every,
            patience: self.patience,
            train_size: self.train_size,
            paths: Paths {
                data: paths.data.unwrap_or_else(|| PathBuf::from("data").join(task.name())),
                checkpoint: paths.checkpoint.unwrap_or_else(|| PathBuf::from("runs").join(format!("{tag}.json"))),
                log: paths.log.unwrap_or_else(|| PathBuf::from("runs").join(format!("{tag}.ndjson"))),
            },
        };
        cfg.skip_config().validate()?;
        cfg.train_config().validate()?;
        if cfg.train_size == Some(0) || cfg.eval_every == Some(0) {
            return Err(Error::Config("train_size and eval_every must be positive".into()));
        }
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn skip_config(&self) -> SkipConfig {
        SkipConfig {
            max_skip: self.k,
            lambda: self.lambda,
            hidden_size: self.hidden_size,
            input_size: crate::data::NUM_DIGITS,
            num_classes: crate::data::NUM_DIGITS,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            optimizer: OptimizerKind::Adam,
            clip_norm: self.clip_norm,
            seed: self.seed,
            eval_every: self.eval_every,
            patience: self.patience.unwrap_or(usize::MAX),
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> ConfigLayer {
        ConfigLayer {
            task: Some(Variant::Single),
            ..ConfigLayer::default()
        }
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = single().resolve().unwrap();
        assert_eq!((c.k, c.lambda, c.hidden_size, c.lr, c.batch_size), (10, 0.5, 200, 0.001, 50));
        assert_eq!(c.model, ModelChoice::Dynskip);
        assert_eq!(c.paths.data, PathBuf::from("data/single"));
    }

    #[test]
    fn later_layers_win() {
        let file = ConfigLayer {
            epochs: Some(3),
            lr: Some(0.01),
            ..ConfigLayer::default()
        };
        let flags = ConfigLayer {
            epochs: Some(4),
            ..ConfigLayer::default()
        };
        let c = ConfigLayer::preset(Preset::Desk).overlay(&single()).overlay(&file).overlay(&flags).resolve().unwrap();
        assert_eq!((c.epochs, c.lr, c.train_size), (4, 0.01, Some(30_000)));
    }

    #[test]
    fn plain_lstm_pins_the_skip_settings() {
        let mut l = single();
        l.model = Some(ModelChoice::PlainLstm);
        let c = l.resolve().unwrap();
        assert!(c.skip_config().is_plain());
        l.k = Some(10);
        assert!(matches!(l.resolve(), Err(Error::Config(_))));
        l.k = Some(1);
        l.lambda = Some(0.0);
        assert!(l.resolve().is_ok());
    }

    #[test]
    fn file_layer_uses_the_canonical_names() {
        let layer: ConfigLayer =
            serde_json::from_str(r#"{"task":"double","model":"attention","K":5,"paths":{"log":"x.ndjson"}}"#).unwrap();
        let c = layer.resolve().unwrap();
        assert_eq!((c.task, c.model, c.k), (Variant::Double, ModelChoice::Attention, 5));
        assert_eq!(c.paths.log, PathBuf::from("x.ndjson"));
        assert!(serde_json::from_str::<ConfigLayer>(r#"{"hidden":3}"#).is_err());
        let echoed = serde_json::to_value(&c).unwrap();
        assert_eq!(echoed["K"], 5);
    }

    #[test]
    fn missing_task_and_bad_values_are_config_errors() {
        assert!(matches!(ConfigLayer::default().resolve(), Err(Error::Config(_))));
        let mut l = single();
        l.lambda = Some(1.5);
        assert!(matches!(l.resolve(), Err(Error::Config(_))));
        l.lambda = None;
        l.train_size = Some(0);
        assert!(matches!(l.resolve(), Err(Error::Config(_))));
    }
}
