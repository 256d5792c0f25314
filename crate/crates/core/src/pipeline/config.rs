use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::PipelineError;
use crate::data::GeneratorConfig;
use crate::eval::{EvaluationConfig, InferenceConfig};
use crate::graph::GraphBuildConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Directory receiving every artifact of a run.
    pub out_dir: PathBuf,
    /// Existing dataset to use instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

/// Everything a pipeline run needs. The global seed overrides the seeds of
/// the generator and model sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub graph: GraphBuildConfig,
    pub model: ModelConfig,
    pub inference: InferenceConfig,
    pub evaluation: EvaluationConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorConfig::default(),
            graph: GraphBuildConfig::default(),
            model: ModelConfig::default(),
            inference: InferenceConfig::default(),
            evaluation: EvaluationConfig::default(),
            io: IoConfig {
                out_dir: PathBuf::from("out"),
                dataset: None,
            },
        }
    }
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            stage: "config",
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copies the global seed into the sections that consume randomness.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.generator.seed = c.seed;
        c.model.seed = c.seed;
        c
    }

    /// Applies `key.path=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, PipelineError> {
        let mut table = match Value::try_from(self) {
            Ok(Value::Table(t)) => t,
            _ => return Err(config_err("config does not serialize to a table")),
        };
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.generator.validate().map_err(PipelineError::Generate)?;
        self.graph.validate().map_err(PipelineError::BuildGraph)?;
        self.model.validate().map_err(PipelineError::Train)?;
        if !self.inference.threshold.is_finite() {
            return Err(config_err("inference.threshold must be finite"));
        }
        if self
            .evaluation
            .frequency_edges
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(config_err(
                "evaluation.frequency_edges must be strictly increasing",
            ));
        }
        Ok(())
    }
}

pub(crate) fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub(crate) fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), PipelineError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| config_err("empty key"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
