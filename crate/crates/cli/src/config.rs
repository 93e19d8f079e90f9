//! Protocol configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use poscm::messages::MessageReplacement;
use poscm::{Intervention, Regime};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Exp1Twin,
    Exp2Confound,
    Exp3Kernels,
    Probe,
    IdentifyMessages,
    Equiv,
    Iisc,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1Twin => "exp1-twin",
            Experiment::Exp2Confound => "exp2-confound",
            Experiment::Exp3Kernels => "exp3-kernels",
            Experiment::Probe => "probe",
            Experiment::IdentifyMessages => "identify-messages",
            Experiment::Equiv => "equiv",
            Experiment::Iisc => "iisc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterventionConfig {
    VNode { node: usize, value: f64 },
    BetaNode { node: usize, value: f64 },
    VEdgeClamp { source: usize, target: usize, message: Vec<f64> },
    BetaEdgeClamp { source: usize, target: usize, message: Vec<f64> },
}

impl InterventionConfig {
    pub fn build(&self) -> Intervention {
        match self {
            InterventionConfig::VNode { node, value } => Intervention::VNode { node: *node, value: *value },
            InterventionConfig::BetaNode { node, value } => Intervention::BetaNode { node: *node, value: *value },
            InterventionConfig::VEdgeClamp { source, target, message } => Intervention::v_edge_clamp(*source, *target, message.clone()),
            InterventionConfig::BetaEdgeClamp { source, target, message } => Intervention::BetaEdge {
                source: *source,
                target: *target,
                replacement: MessageReplacement::Clamp(message.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub label: String,
    #[serde(default)]
    pub interventions: Vec<InterventionConfig>,
}

impl RegimeConfig {
    pub fn build(&self) -> Result<Regime, ConfigError> {
        Regime::new(self.label.clone(), self.interventions.iter().map(InterventionConfig::build).collect())
            .map_err(|e| ConfigError::Invalid(format!("regime {}: {e}", self.label)))
    }
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProtocolConfig {
    pub experiment: Experiment,
    /// Model file, relative to the config file. Experiments fall back to a
    /// built-in model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ref: Option<PathBuf>,
    #[serde(default)]
    pub regimes: Vec<RegimeConfig>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub n_per: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Experiment-specific parameters.
    #[serde(default)]
    pub params: Value,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ProtocolConfig {
    pub fn new(experiment: Experiment, seeds: Vec<u64>) -> Self {
        Self {
            experiment,
            model_ref: None,
            regimes: Vec::new(),
            seeds,
            n_per: 0,
            out_dir: None,
            alpha: default_alpha(),
            params: Value::Null,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: ProtocolConfig =
            serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("alpha = {}", self.alpha)));
        }
        if let Some(m) = self.model_path() {
            if !m.is_file() {
                return Err(ConfigError::Invalid(format!("model file {} does not exist", m.display())));
            }
        }
        for r in &self.regimes {
            r.build()?;
        }
        Ok(())
    }

    pub fn model_path(&self) -> Option<PathBuf> {
        self.model_ref.as_ref().map(|m| self.base_dir.join(m))
    }

    /// Parameters of type `P`; a missing `params` reads as `{}`.
    pub fn params<P: for<'de> Deserialize<'de>>(&self) -> Result<P, ConfigError> {
        let v = if self.params.is_null() { Value::Object(Default::default()) } else { self.params.clone() };
        serde_json::from_value(v).map_err(|e| ConfigError::Invalid(format!("params: {e}")))
    }

    pub fn regimes(&self) -> Result<Vec<Regime>, ConfigError> {
        self.regimes.iter().map(RegimeConfig::build).collect()
    }

    /// Canonical bytes: the config as JSON with sorted keys, without `outDir`
    /// and the resolved base directory.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("outDir");
        }
        serde_json::to_vec(&v).expect("value serializes")
    }

    /// SHA-256 of the canonical bytes, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    /// Replaces the seeds with `k, k + 1, ...`, keeping their number.
    pub fn override_seeds(&mut self, k: u64) {
        let n = self.seeds.len() as u64;
        self.seeds = (k..k + n).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"{
            "experiment": "equiv",
            "seeds": [3, 1],
            "nPer": 100,
            "regimes": [
                {"label": "obs"},
                {"label": "do", "interventions": [{"type": "v_node", "node": 0, "value": 1.0}]}
            ],
            "params": {"b": 1, "a": [2, 3]}
        }"#
    }

    #[test]
    fn parses_and_builds_regimes() {
        let cfg: ProtocolConfig = serde_json::from_str(sample()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment, Experiment::Equiv);
        assert_eq!(cfg.alpha, 0.05);
        let r = cfg.regimes().unwrap();
        assert_eq!(r[1].value_override(0), Some(1.0));
    }

    #[test]
    fn hash_ignores_key_order_and_out_dir() {
        let a: ProtocolConfig = serde_json::from_str(sample()).unwrap();
        let reordered = r#"{
            "params": {"a": [2, 3], "b": 1},
            "regimes": [
                {"interventions": [], "label": "obs"},
                {"label": "do", "interventions": [{"value": 1.0, "node": 0, "type": "v_node"}]}
            ],
            "nPer": 100, "seeds": [3, 1], "experiment": "equiv", "outDir": "elsewhere"
        }"#;
        let b: ProtocolConfig = serde_json::from_str(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.n_per = 101;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg: ProtocolConfig = serde_json::from_str(sample()).unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg: ProtocolConfig = serde_json::from_str(sample()).unwrap();
        cfg.model_ref = Some("missing-model.json".into());
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<ProtocolConfig>(r#"{"experiment": "nope", "seeds": [1]}"#).is_err());
        assert!(serde_json::from_str::<ProtocolConfig>(r#"{"experiment": "probe", "seeds": [1], "extra": 1}"#).is_err());
    }

    #[test]
    fn seed_override_keeps_count() {
        let mut cfg: ProtocolConfig = serde_json::from_str(sample()).unwrap();
        cfg.override_seeds(10);
        assert_eq!(cfg.seeds, vec![10, 11]);
    }
}
