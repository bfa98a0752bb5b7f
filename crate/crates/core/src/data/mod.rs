//! Synthetic number-prediction tasks.
//!
//! A sequence of `T` digits ends in a pointer. In the single-skip task the
//! label is the digit the pointer points at; in the double-skip task the
//! pointed-at digit is itself a pointer (constrained to point further back)
//! and the label is the digit it points at. Positions are zero-based.

mod generate;
mod io;
mod oracle;

pub use generate::{generate, Dataset, DatasetSpec};
pub use io::{SPLIT_FILES, parse_line, read_dataset, read_split, write_dataset, write_split, SplitHeader};
pub use oracle::{label_oracle, LabelError};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_DIGITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Single,
    Double,
}

impl Variant {
    /// Sequence length used by the reference benchmark.
    pub fn default_len(self) -> usize {
        match self {
            Variant::Single => 11,
            Variant::Double => 21,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::Double => "double",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Variant::Single),
            "double" => Ok(Variant::Double),
            other => Err(Error::Config(format!("unknown task variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One-hot encodes a digit sequence, one vector per position.
pub fn encode(tokens: &[usize]) -> Result<Vec<Tensor>> {
    tokens
        .iter()
        .map(|&tok| {
            if tok >= NUM_DIGITS {
                return Err(Error::contract(format!("token {tok} is not a digit")));
            }
            let mut v = vec![0.0; NUM_DIGITS];
            v[tok] = 1.0;
            Ok(Tensor::vector(v))
        })
        .collect()
}

/// Per-step batch inputs: element `t` is a `[batch × 10]` one-hot matrix of
/// the `t`-th token of every example. All examples must share one length.
pub fn encode_batch(batch: &[&Example]) -> Result<Vec<Tensor>> {
    let len = batch
        .first()
        .ok_or_else(|| Error::contract("cannot encode an empty batch"))?
        .len();
    if len == 0 {
        return Err(Error::contract("empty sequence"));
    }
    if let Some(bad) = batch.iter().find(|e| e.len() != len) {
        return Err(Error::contract(format!(
            "ragged batch: lengths {len} and {}",
            bad.len()
        )));
    }
    (0..len)
        .map(|t| {
            let mut data = vec![0.0; batch.len() * NUM_DIGITS];
            for (row, ex) in batch.iter().enumerate() {
                let tok = ex.tokens[t];
                if tok >= NUM_DIGITS {
                    return Err(Error::contract(format!("token {tok} is not a digit")));
                }
                data[row * NUM_DIGITS + tok] = 1.0;
            }
            Tensor::new(vec![batch.len(), NUM_DIGITS], data)
        })
        .collect()
}
