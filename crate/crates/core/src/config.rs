//! Experiment configuration: a sectioned TOML file plus `section.key`
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeConfig, EarlyStop, Strategy};
use crate::error::{Error, Result};
use crate::harness::{Axis, Learner, Scenario};
use crate::posterior::MaskedSequence;
use crate::task::{TaskKind, TaskSpec};

/// The configuration shipped with the tool.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PSCLAB_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    #[serde(alias = "total_steps")]
    pub diffusion_steps: usize,
    pub block_length: usize,
    pub temperature: f64,
    pub strategy: Strategy,
    pub revision_budget: usize,
    pub early_stop: bool,
    pub early_stop_threshold: f64,
    pub patience: usize,
    pub seed: u64,
    #[serde(alias = "max_length", skip_serializing_if = "Option::is_none")]
    pub gen_length: Option<usize>,
    pub prompt_length: usize,
    /// Token line such as `4 _ _ 7`; a sampled trajectory is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let es = EarlyStop::default();
        DecodeSection {
            diffusion_steps: 16,
            block_length: 32,
            temperature: 0.0,
            strategy: Strategy::LowConfidence,
            revision_budget: 0,
            early_stop: es.enabled,
            early_stop_threshold: es.threshold,
            patience: es.patience,
            seed: 0,
            gen_length: None,
            prompt_length: 1,
            prompt: None,
        }
    }
}

impl DecodeSection {
    pub fn to_decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            total_steps: self.diffusion_steps,
            block_length: self.block_length,
            temperature: self.temperature,
            strategy: self.strategy,
            revision_budget: self.revision_budget,
            early_stop: EarlyStop {
                enabled: self.early_stop,
                threshold: self.early_stop_threshold,
                patience: self.patience,
            },
            seed: self.seed,
            max_length: self.gen_length.unwrap_or(usize::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Axis,
    /// Step counts for the diffusion axis, lengths for the sequential axis.
    pub grid: Vec<usize>,
    pub runs: usize,
    pub temperatures: Vec<f64>,
    pub k_max: usize,
    pub samples: usize,
    pub prompts: usize,
    pub depth: usize,
    pub plateau_delta: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: Axis::Diffusion,
            grid: vec![1, 2, 4, 8, 16],
            runs: 100,
            temperatures: vec![0.5, 1.0],
            k_max: 8,
            samples: 16,
            prompts: 20,
            depth: 8,
            plateau_delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub pair: Vec<TaskKind>,
    /// Largest skip distance; gaps are reported for `2..=k`.
    pub k: usize,
    pub radius: usize,
    pub mesh: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            pair: vec![TaskKind::Serial, TaskKind::Parallel],
            k: 10,
            radius: 1,
            mesh: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub references: Option<String>,
    pub embedding_dimension: usize,
    pub embedding_seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            hypotheses: None,
            sources: None,
            references: None,
            embedding_dimension: 64,
            embedding_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Where artifacts go; not part of the saved config.
    #[serde(skip_serializing)]
    pub directory: Option<String>,
    pub formats: Vec<String>,
    pub plot: bool,
    /// Report JSON read by the `report` command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            formats: vec!["json".into(), "csv".into()],
            plot: true,
            input: None,
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Not part of the saved config.
    #[serde(default, skip_serializing)]
    pub workers: usize,
    pub task: TaskSpec,
    #[serde(default)]
    pub learner: Learner,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub entropy: EntropySection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
}

const FORMATS: [&str; 2] = ["json", "csv"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_value(parse_value(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Deserialize and validate a TOML tree.
    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section, whichever command will run.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.scenario()?.models().map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Config(other.to_string()),
        })?;
        if let Some(p) = &self.decode.prompt {
            let seq = self.prompt_sequence(p)?;
            if seq.len() != self.task.length {
                return Err(Error::Config(format!(
                    "prompt has {} tokens, task length is {}",
                    seq.len(),
                    self.task.length
                )));
            }
        }
        let s = &self.sweep;
        if s.runs == 0 || s.prompts == 0 || s.samples == 0 {
            return Err(Error::Config(
                "runs, prompts and samples must be positive".into(),
            ));
        }
        if s.grid.is_empty() || s.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sweep grid must be non-empty and strictly ascending".into(),
            ));
        }
        if s.k_max == 0 || s.k_max > s.samples {
            return Err(Error::Config(format!(
                "k_max = {} must lie in [1, samples = {}]",
                s.k_max, s.samples
            )));
        }
        if s.temperatures.is_empty() || s.temperatures.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config(
                "temperatures must be a non-empty list of finite values >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s.plateau_delta) {
            return Err(Error::Config("plateau_delta must lie in [0, 1]".into()));
        }
        let e = &self.entropy;
        if e.pair.len() != 2 {
            return Err(Error::Config(
                "entropy pair must name exactly two task kinds".into(),
            ));
        }
        if e.k < 2 || e.mesh == 0 || self.task.m % e.mesh != 0 || 2 * e.radius + 1 > self.task.m {
            return Err(Error::Config(format!(
                "entropy settings k = {}, radius = {}, mesh = {} do not fit m = {}",
                e.k, e.radius, e.mesh, self.task.m
            )));
        }
        if self.metrics.embedding_dimension == 0 {
            return Err(Error::Config("embedding_dimension must be positive".into()));
        }
        if let Some(f) = self
            .output
            .formats
            .iter()
            .find(|f| !FORMATS.contains(&f.as_str()))
        {
            return Err(Error::Config(format!("unknown output format `{f}`")));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let mut sc = Scenario::new(
            self.task.clone(),
            self.learner.clone(),
            self.decode.to_decode_config(),
            self.master_seed,
        );
        sc.prompt_length = self.decode.prompt_length;
        Ok(sc)
    }

    pub fn prompt_sequence(&self, text: &str) -> Result<MaskedSequence> {
        let seq: MaskedSequence = text.parse()?;
        if seq.tokens().iter().flatten().any(|&t| t >= self.task.m) {
            return Err(Error::Config(format!(
                "prompt token outside 0..{}",
                self.task.m
            )));
        }
        Ok(seq)
    }

    /// Resolved configuration as canonical TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

pub fn parse_value(text: &str) -> Result<toml::Value> {
    toml::from_str(text).map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

/// Set `path` (`key` or `section.key`) in a TOML tree.
pub fn set_value(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty());
    let Some(leaf) = leaf else {
        return Err(Error::Config(format!("bad override key `{path}`")));
    };
    let mut table = root
        .as_table_mut()
        .ok_or_else(|| Error::Config("config root is not a table".into()))?;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a section")))?;
    }
    let mut leaf = leaf;
    for &(section, alias, canonical) in ALIASES {
        if path.starts_with(section) && (leaf == alias || leaf == canonical) {
            table.remove(alias);
            leaf = canonical;
        }
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

const ALIASES: &[(&str, &str, &str)] = &[
    ("decode.", "total_steps", "diffusion_steps"),
    ("decode.", "max_length", "gen_length"),
];

/// Parse `section.key=value`, reading the value as TOML and falling back
/// to a bare string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    Ok((key.trim().to_string(), value))
}
