use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and mixing hyperparameters of a dynamic-skip LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipConfig {
    /// Maximum skip `K`: the agent chooses among the `K` most recent states.
    #[serde(rename = "K")]
    pub max_skip: usize,
    /// Weight of the selected state in the blend with the previous state.
    pub lambda: f64,
    pub hidden_size: usize,
    pub input_size: usize,
    pub num_classes: usize,
}

impl SkipConfig {
    /// With `K = 1` and `lambda = 0` the cell reduces to a standard LSTM.
    pub fn plain_lstm(hidden_size: usize, input_size: usize, num_classes: usize) -> Self {
        SkipConfig {
            max_skip: 1,
            lambda: 0.0,
            hidden_size,
            input_size,
            num_classes,
        }
    }

    pub fn is_plain(&self) -> bool {
        self.max_skip == 1 && self.lambda == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_skip == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} is outside [0, 1]", self.lambda)));
        }
        if self.hidden_size == 0 || self.input_size == 0 || self.num_classes == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// How the skip distribution is used to form the recurrent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Sample (or argmax) one past state; agent trained by REINFORCE.
    Dynskip,
    /// Use the expected state under the skip distribution; fully differentiable.
    Attention,
}
