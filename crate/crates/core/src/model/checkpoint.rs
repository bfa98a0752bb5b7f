//! JSON checkpoints.
//!
//! One document: `format_version`, a `config` object, and one
//! `{shape, data}` entry per parameter array. LSTM gates are written as
//! separate arrays (`lstm.W_x_g`, `lstm.W_h_i`, `lstm.b_o`, ...).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::params::{ModelParams, ParamId};
use super::{ModelKind, SkipConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

const GATES: [&str; 4] = ["g", "i", "f", "o"];

#[derive(Serialize, Deserialize)]
struct ConfigRecord {
    #[serde(flatten)]
    skip: SkipConfig,
    model: ModelKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub params: ModelParams,
}

fn gate_blocks(id: ParamId) -> Option<&'static str> {
    match id {
        ParamId::LstmWx => Some("lstm.W_x"),
        ParamId::LstmWh => Some("lstm.W_h"),
        ParamId::LstmB => Some("lstm.b"),
        _ => None,
    }
}

impl Checkpoint {
    pub fn new(kind: ModelKind, params: ModelParams) -> Self {
        Checkpoint { kind, params }
    }

    pub fn config(&self) -> &SkipConfig {
        self.params.config()
    }

    /// Named arrays as written to disk, gates split out.
    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        let hidden = self.config().hidden_size;
        let mut out = Vec::new();
        for id in ParamId::ALL {
            let t = self.params.get(id);
            match gate_blocks(id) {
                Some(prefix) => {
                    let cols: usize = t.shape[1..].iter().product();
                    let block_shape: Vec<usize> =
                        std::iter::once(hidden).chain(t.shape[1..].iter().copied()).collect();
                    for (g, gate) in GATES.iter().enumerate() {
                        let data = t.data[g * hidden * cols..(g + 1) * hidden * cols].to_vec();
                        out.push((format!("{prefix}_{gate}"), Tensor::new(block_shape.clone(), data).unwrap()));
                    }
                }
                None => out.push((id.name().to_string(), t.clone())),
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("format_version".into(), FORMAT_VERSION.into());
        let record = ConfigRecord {
            skip: *self.config(),
            model: self.kind,
        };
        doc.insert("config".into(), serde_json::to_value(record).expect("config serializes"));
        for (name, t) in self.named_arrays() {
            doc.insert(name, serde_json::to_value(t).expect("tensor serializes"));
        }
        Value::Object(doc)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let doc = value
            .as_object()
            .ok_or_else(|| Error::contract("checkpoint is not a JSON object"))?;
        let version = doc.get("format_version").and_then(Value::as_u64);
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::contract(format!(
                "unsupported checkpoint format_version {version:?}"
            )));
        }
        let record: ConfigRecord = serde_json::from_value(
            doc.get("config")
                .cloned()
                .ok_or_else(|| Error::contract("checkpoint has no config"))?,
        )?;
        let cfg = record.skip;
        cfg.validate()?;
        let read = |name: &str, shape: Vec<usize>| -> Result<Tensor> {
            let t: Tensor = serde_json::from_value(
                doc.get(name)
                    .cloned()
                    .ok_or_else(|| Error::contract(format!("checkpoint lacks {name}")))?,
            )?;
            if t.shape != shape || t.numel() != shape.iter().product::<usize>() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: t.shape,
                    right: shape,
                });
            }
            Ok(t)
        };
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for id in ParamId::ALL {
            let shape = id.shape(&cfg);
            match gate_blocks(id) {
                Some(prefix) => {
                    let mut block_shape = shape.clone();
                    block_shape[0] = cfg.hidden_size;
                    let mut data = Vec::with_capacity(shape.iter().product());
                    for gate in GATES {
                        data.extend(read(&format!("{prefix}_{gate}"), block_shape.clone())?.data);
                    }
                    tensors.push(Tensor::new(shape, data)?);
                }
                None => tensors.push(read(id.name(), shape)?),
            }
        }
        Ok(Checkpoint {
            kind: record.model,
            params: ModelParams::from_parts(cfg, tensors),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}
