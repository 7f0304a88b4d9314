//! Experiment configuration: a JSON document plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 137, 256, 314, 999];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            seeds: default_seeds(),
            parameters: BTreeMap::new(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        Ok(())
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = seeds.to_vec();
        self
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    /// Applies a `key=value` override; the value is parsed as JSON when
    /// possible and kept as a string otherwise.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("parameter override {kv:?} is not key=value")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(HarnessError::Config(format!(
                "parameter override {kv:?} has an empty key"
            )));
        }
        let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
        self.parameters.insert(k.to_string(), value);
        Ok(())
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.parameters.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| HarnessError::Config(format!("parameter {key} must be a number, got {v}"))),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.parameters.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().map(|x| x as usize).ok_or_else(|| {
                HarnessError::Config(format!("parameter {key} must be a non-negative integer, got {v}"))
            }),
        }
    }

    pub fn usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.parameters.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|x| x as usize)
                        .ok_or_else(|| HarnessError::Config(format!("parameter {key} must list integers, got {v}")))
                })
                .collect(),
            Some(Value::Number(n)) if n.is_u64() => Ok(vec![n.as_u64().unwrap() as usize]),
            Some(v) => Err(HarnessError::Config(format!(
                "parameter {key} must be an integer list, got {v}"
            ))),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.parameters.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(HarnessError::Config(format!(
                "parameter {key} must be a string, got {v}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut cfg: ExperimentConfig = serde_json::from_str(r#"{"experiment": "xor"}"#).unwrap();
        assert_eq!(cfg.seeds, DEFAULT_SEEDS.to_vec());
        cfg.apply_override("n_train=300").unwrap();
        cfg.apply_override("ranks=[1,2]").unwrap();
        cfg.apply_override("table=scores.csv").unwrap();
        assert_eq!(cfg.usize("n_train", 5).unwrap(), 300);
        assert_eq!(cfg.usize_list("ranks", &[4]).unwrap(), vec![1, 2]);
        assert_eq!(cfg.string("table").unwrap().as_deref(), Some("scores.csv"));
        assert_eq!(cfg.f64("missing", 0.25).unwrap(), 0.25);
        assert!(cfg.usize("table", 1).is_err());
        assert!(cfg.apply_override("novalue").is_err());
    }

    #[test]
    fn rejects_empty_seeds_and_unknown_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"experiment": "xor", "seeds": []}"#).unwrap();
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"experiment": "xor", "sedes": [1]}"#).is_err());
    }
}
