//! Pipeline configuration: a TOML document plus dotted `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::TrainConfig;
use crate::error::{Error, Result};
use crate::featsel::ForestHyperparams;
use crate::io::{read_file, SnowInputs};
use crate::snowpart::SigmoidParams;
use crate::timeseries::{AggregationMethod, MissingPolicy, MonthRange, MonthStamp};

/// Training/evaluation boundary. Rows after `train_end` are never used for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Defaults to the first month of the aligned data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_start: Option<MonthStamp>,
    pub train_end: MonthStamp,
}

/// Which columns play which role in the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableRoles {
    pub precip: String,
    pub temperature: String,
    pub humidity: String,
    pub pressure: String,
    pub swe: String,
    pub discharge: String,
    /// Random-forest candidate pool; empty means every input column except
    /// SWE, discharge and derived columns.
    pub candidates: Vec<String>,
}

impl Default for VariableRoles {
    fn default() -> Self {
        VariableRoles {
            precip: "APCP".into(),
            temperature: "TMP".into(),
            humidity: "SPFH".into(),
            pressure: "PRES".into(),
            swe: "SWE".into(),
            discharge: "Q".into(),
            candidates: Vec::new(),
        }
    }
}

impl VariableRoles {
    pub fn snow_inputs(&self) -> SnowInputs {
        SnowInputs {
            precip: self.precip.clone(),
            temperature: self.temperature.clone(),
            humidity: self.humidity.clone(),
            pressure: self.pressure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiSection {
    pub timescales: Vec<usize>,
}

impl Default for SpiSection {
    fn default() -> Self {
        SpiSection {
            timescales: vec![3, 4, 6, 12, 60],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub top_k: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        let hp = ForestHyperparams::default();
        ForestSection {
            n_trees: hp.n_trees,
            max_depth: hp.max_depth,
            min_samples_leaf: hp.min_samples_leaf,
            features_per_split: hp.features_per_split,
            bootstrap: hp.bootstrap,
            top_k: 3,
        }
    }
}

impl ForestSection {
    pub fn hyperparams(&self, seed: u64) -> ForestHyperparams {
        ForestHyperparams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split,
            bootstrap: self.bootstrap,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub huber_delta: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            huber_delta: c.huber_delta,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            huber_delta: self.huber_delta,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiSection {
    /// `None` uses the sample-size rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub event_windows: Vec<MonthRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Per-basin CSV files; relative paths resolve against the config file.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub split: SplitConfig,
    #[serde(default)]
    pub variables: VariableRoles,
    /// Required for every column of a daily or sub-daily input.
    #[serde(default)]
    pub aggregation: BTreeMap<String, AggregationMethod>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
    #[serde(default)]
    pub spi: SpiSection,
    #[serde(default)]
    pub snow: SigmoidParams,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub mi: MiSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply `a.b.c=value` to a TOML table. Values parse as TOML, falling back
/// to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(
        parts[parts.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

impl PipelineConfig {
    /// Parse TOML text, apply overrides, resolve relative input and output
    /// paths against `base_dir`, and validate.
    pub fn from_toml_str(
        text: &str,
        overrides: &[String],
        base_dir: Option<&Path>,
    ) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(base) = base_dir {
            for p in cfg
                .inputs
                .iter_mut()
                .chain(std::iter::once(&mut cfg.output_dir))
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_file(path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        Self::from_toml_str(&text, overrides, base)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.inputs.is_empty() {
            return bad("`inputs` is empty".into());
        }
        if self.spi.timescales.is_empty() || self.spi.timescales.contains(&0) {
            return bad("spi.timescales must be non-empty and >= 1".into());
        }
        let mut ts = self.spi.timescales.clone();
        ts.sort_unstable();
        ts.dedup();
        if ts.len() != self.spi.timescales.len() {
            return bad("spi.timescales has duplicates".into());
        }
        if self.forest.top_k == 0 {
            return bad("forest.top_k must be >= 1".into());
        }
        if let Some(b) = self.mi.bins {
            if b < 2 {
                return bad("mi.bins must be >= 2".into());
            }
        }
        if let Some(s) = self.split.train_start {
            if s > self.split.train_end {
                return bad(format!(
                    "split.train_start {s} after train_end {}",
                    self.split.train_end
                ));
            }
        }
        SigmoidParams::new(self.snow.midpoint_tw, self.snow.steepness)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train
            .train_config(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for w in &self.evaluation.event_windows {
            MonthRange::new(w.start, w.end).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the config, with the
    /// output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// First 12 hex digits of [`Self::hash`], used in artifact names.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// Provenance line written at the top of every artifact.
    pub fn stamp(&self) -> String {
        format!("snodri config_hash={} seed={}", self.hash(), self.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Seed for one stage: the first 8 bytes of SHA-256(global seed, stage name).
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
