//! Checkpoint files.
//!
//! ```text
//! b"CONVSEQ\x01"                 8-byte magic (last byte is the format version)
//! u64 little-endian              length of the JSON header in bytes
//! JSON header                    {format_version, step, config, adafactor, tensors: [...]}
//! f64 little-endian values       every tensor's data back to back
//! ```
//!
//! Each header tensor entry is `{name, shape, offset, len}` with `offset` and
//! `len` counted in values from the start of the data block. Model parameters
//! use their model names; optimizer accumulators are stored as
//! `optimizer/<param>/row`, `optimizer/<param>/col` (factored) or
//! `optimizer/<param>/full`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adafactor::{AdafactorConfig, OptimizerState, SecondMoment};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CONVSEQ\x01";
const FORMAT_VERSION: u32 = 1;
const OPT_PREFIX: &str = "optimizer/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    config: ModelConfig,
    adafactor: Option<AdafactorConfig>,
    optimizer_step: Option<u64>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, optimizer: Option<&OptimizerState>) -> Self {
        Self {
            step,
            config: model.config().clone(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, values: &[f64]| {
            tensors.push(Entry {
                name,
                shape,
                offset: data.len(),
                len: values.len(),
            });
            data.extend_from_slice(values);
        };
        for (name, t) in &self.params {
            add(name.clone(), t.shape().to_vec(), t.data());
        }
        if let Some(opt) = &self.optimizer {
            for (name, m) in &opt.moments {
                for (slot, v) in m.slots() {
                    add(format!("{OPT_PREFIX}{name}/{slot}"), vec![v.len()], v);
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            step: self.step,
            config: self.config.clone(),
            adafactor: self.optimizer.as_ref().map(|o| o.config),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
        };
        let json = serde_json::to_vec_pretty(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("not a convseq checkpoint (bad magic)".into());
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or("truncated")?;
        let json = body.get(..hlen).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(json).map_err(|e| format!("bad header: {e}"))?;
        if header.format_version != FORMAT_VERSION {
            return Err(format!("unsupported format version {}", header.format_version));
        }
        let raw = &body[hlen..];
        if raw.len() % 8 != 0 {
            return Err("data block is not a whole number of f64 values".into());
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut params = BTreeMap::new();
        let mut slots: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for e in header.tensors {
            let values = data
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| format!("tensor {} points past the data block", e.name))?
                .to_vec();
            if let Some(rest) = e.name.strip_prefix(OPT_PREFIX) {
                let (param, slot) = rest
                    .rsplit_once('/')
                    .ok_or_else(|| format!("bad optimizer entry {}", e.name))?;
                slots
                    .entry(param.to_string())
                    .or_default()
                    .insert(slot.to_string(), values);
            } else {
                let t = Tensor::new(e.shape, values).map_err(|err| format!("tensor {}: {err}", e.name))?;
                params.insert(e.name, t);
            }
        }
        let optimizer = match (header.adafactor, header.optimizer_step) {
            (Some(config), Some(step)) => {
                let mut moments = BTreeMap::new();
                for (param, mut s) in slots {
                    let m = match (s.remove("row"), s.remove("col"), s.remove("full")) {
                        (Some(row), Some(col), None) => SecondMoment::Factored { row, col },
                        (None, None, Some(full)) => SecondMoment::Full(full),
                        _ => return Err(format!("incomplete optimizer state for {param}")),
                    };
                    moments.insert(param, m);
                }
                Some(OptimizerState { step, config, moments })
            }
            _ => None,
        };
        Ok(Self {
            step: header.step,
            config: header.config,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}
