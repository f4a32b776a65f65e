//! The run configuration file: one TOML document with a table per concern.
//! Command-line `key=value` overrides are merged into the parsed document
//! before it is checked against the schema, so a typo in either place is
//! reported with the offending key.

use std::path::{Path, PathBuf};

use convseq::bench::throughput::DEFAULT_MEMORY_BUDGET;
use convseq::bench::DEFAULT_GRID;
use convseq::model::{ConvVariant, ModelConfig};
use convseq::train::RunConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: RunConfig,
    pub finetune: RunConfig,
    pub benchmark: BenchmarkConfig,
    pub gradcheck: GradcheckConfig,
    pub corrupt: CorruptConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Plain-text pre-training corpus, one paragraph per line.
    pub corpus: Option<PathBuf>,
    pub task: String,
    /// `text<TAB>label` files.
    pub train: Option<PathBuf>,
    /// Defaults to `train`.
    pub valid: Option<PathBuf>,
    /// Checkpoint to start fine-tuning from, or to evaluate.
    pub checkpoint: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            task: "sentiment".into(),
            train: None,
            valid: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub variants: Vec<ConvVariant>,
    pub grid: Vec<usize>,
    /// Off: FLOPs only, no timed steps.
    pub timing: bool,
    pub batch: usize,
    pub reps: usize,
    /// Points whose estimated graph memory exceeds this many bytes are
    /// recorded as infeasible instead of run.
    pub memory_budget: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            variants: ConvVariant::ALL.to_vec(),
            grid: DEFAULT_GRID.to_vec(),
            timing: true,
            batch: 1,
            reps: 5,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 17 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Byte,
    Word,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptConfig {
    /// Read from standard input when unset.
    pub input: Option<PathBuf>,
    pub granularity: Granularity,
    pub span_len: usize,
    pub rate: f64,
    pub seed: u64,
}

impl Default for CorruptConfig {
    fn default() -> Self {
        Self {
            input: None,
            granularity: Granularity::Byte,
            span_len: 3,
            rate: 0.15,
            seed: 0,
        }
    }
}

/// Tables whose `seed` key `--seed` sets.
const SEEDED: [&str; 5] = ["model", "pretrain", "finetune", "gradcheck", "corrupt"];

pub fn load(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: toml::Table =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        for table in SEEDED {
            set(&mut doc, &format!("{table}.seed"), toml::Value::Integer(seed as i64))?;
        }
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("override `{item}` is not of the form key=value")))?;
        set(&mut doc, key.trim(), parse_value(raw.trim()))?;
    }
    // Round-trip through text so schema errors carry the key path.
    let merged = toml::to_string(&doc).map_err(|e| Failure::Config(e.to_string()))?;
    let cfg: FileConfig =
        toml::from_str(&merged).map_err(|e| Failure::Config(format!("{}: {}", path.display(), e.message())))?;
    cfg.model.validate()?;
    Ok(cfg)
}

/// A TOML literal when the text parses as one, otherwise a bare string, so
/// `lr=0.01`, `timing=false` and `corpus=data/corpus.txt` all work.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Failure> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Config(format!("malformed override key `{key}`")));
    }
    let (last, tables) = parts.split_last().unwrap();
    let mut cur = doc;
    for (i, part) in tables.iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("override `{key}`: `{}` is not a table", parts[..=i].join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn write_effective(cfg: &FileConfig, out: &Path) -> Result<(), Failure> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Failure::Runtime(format!("cannot serialize config: {e}")))?;
    let path = out.join("effective_config.toml");
    std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
