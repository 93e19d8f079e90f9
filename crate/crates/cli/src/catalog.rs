//! Model files: built-in zoo models and layered networks as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use poscm::identify::{calibrated_confounding_pair, reparameterize_context, reparameterize_contexts, ContextMap};
use poscm::messages::Univariate;
use poscm::models::zoo::{
    context_twin_model, distributive_toy, message_channel_model, random_binary_poscm, two_node_confounding, KernelModel, ToySide,
};
use poscm::models::LayeredNetSpec;
use poscm::PoscmSpec;

use crate::config::ConfigError;

fn default_edge_prob() -> f64 {
    0.7
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelFile {
    TwoNode { p: f64, q0: f64, q1: f64 },
    KernelModel(KernelModel),
    RandomBinary { n: usize },
    DistributiveToy { side: ToySide },
    MessageChannel {
        channel: Univariate,
        #[serde(default = "default_edge_prob")]
        edge_prob: f64,
        #[serde(default = "default_noise")]
        noise_sd: f64,
    },
    ContextTwin,
    /// The default layered retina.
    Retina,
    Layered { net: LayeredNetSpec },
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn layered(&self) -> Option<LayeredNetSpec> {
        match self {
            ModelFile::Retina => Some(LayeredNetSpec::retina()),
            ModelFile::Layered { net } => Some(net.clone()),
            _ => None,
        }
    }

    pub fn poscm(&self) -> Result<PoscmSpec, ConfigError> {
        let spec = match self {
            ModelFile::TwoNode { p, q0, q1 } => two_node_confounding(*p, *q0, *q1),
            ModelFile::KernelModel(m) => m.spec(),
            ModelFile::RandomBinary { n } => random_binary_poscm(*n),
            ModelFile::DistributiveToy { side } => distributive_toy(*side),
            ModelFile::MessageChannel { channel, edge_prob, noise_sd } => message_channel_model(channel.clone(), *edge_prob, *noise_sd),
            ModelFile::ContextTwin => context_twin_model(),
            ModelFile::Retina | ModelFile::Layered { .. } => self.layered().expect("layered").poscm(),
        };
        spec.map_err(|e| ConfigError::Invalid(format!("model: {e}")))
    }
}

/// Serializable context bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapFile {
    Swap { a: usize, b: usize, labels: usize },
    Permutation { perm: Vec<usize> },
    Affine { scale: f64, shift: f64 },
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl MapFile {
    pub fn build(&self) -> ContextMap {
        match self {
            MapFile::Swap { a, b, labels } => ContextMap::swap(*a, *b, *labels),
            MapFile::Permutation { perm } => ContextMap::LabelPermutation(perm.clone()),
            MapFile::Affine { scale, shift } => ContextMap::Affine { scale: *scale, shift: *shift },
            MapFile::PiecewiseLinear { knots } => ContextMap::PiecewiseLinear { knots: knots.clone() },
        }
    }
}

/// Second model of an equivalence check, built from the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TwinFile {
    /// Every context relabelled by `map`, or only the listed nodes.
    Reparameterize {
        map: MapFile,
        #[serde(default)]
        nodes: Option<Vec<usize>>,
    },
    /// The calibrated two-node pair; the base model is replaced by `M`.
    Calibrated { p: f64, q0: f64, q1: f64, p_prime: f64 },
    Model { model: ModelFile },
}

impl TwinFile {
    pub fn build(&self, base: &PoscmSpec) -> Result<(PoscmSpec, PoscmSpec), ConfigError> {
        let invalid = |e: poscm::PoscmError| ConfigError::Invalid(format!("twin: {e}"));
        match self {
            TwinFile::Reparameterize { map, nodes: None } => {
                Ok((base.clone(), reparameterize_context(base, &map.build()).map_err(invalid)?))
            }
            TwinFile::Reparameterize { map, nodes: Some(nodes) } => {
                let mut maps = vec![None; base.n()];
                for k in nodes {
                    *maps.get_mut(*k).ok_or_else(|| ConfigError::Invalid(format!("twin: node {k}")))? = Some(map.build());
                }
                Ok((base.clone(), reparameterize_contexts(base, &maps).map_err(invalid)?))
            }
            TwinFile::Calibrated { p, q0, q1, p_prime } => calibrated_confounding_pair(*p, *q0, *q1, *p_prime).map_err(invalid),
            TwinFile::Model { model } => Ok((base.clone(), model.poscm()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_files_round_trip() {
        let files = [
            r#"{"kind": "two-node", "p": 0.5, "q0": 0.2, "q1": 0.8}"#,
            r#"{"kind": "kernel-model"}"#,
            r#"{"kind": "random-binary", "n": 5}"#,
            r#"{"kind": "distributive-toy", "side": "rhs"}"#,
            r#"{"kind": "message-channel", "channel": {"name": "tanh"}}"#,
            r#"{"kind": "context-twin"}"#,
            r#"{"kind": "retina"}"#,
        ];
        for f in files {
            let m: ModelFile = serde_json::from_str(f).unwrap();
            m.poscm().unwrap();
            let back: ModelFile = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            assert_eq!(back, m);
        }
        let net = ModelFile::Layered { net: LayeredNetSpec::retina() };
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        assert_eq!(back.layered(), Some(LayeredNetSpec::retina()));
    }

    #[test]
    fn twins_build() {
        let base = ModelFile::ContextTwin.poscm().unwrap();
        let t: TwinFile = serde_json::from_str(r#"{"kind": "reparameterize", "map": {"kind": "affine", "scale": 2.0, "shift": 1.0}}"#).unwrap();
        let (_, twin) = t.build(&base).unwrap();
        assert_eq!(twin.context_domain[0], poscm::Domain::interval(1.0, 3.0).unwrap());
        let t: TwinFile = serde_json::from_str(r#"{"kind": "calibrated", "p": 0.5, "q0": 0.2, "q1": 0.8, "p_prime": 0.3}"#).unwrap();
        assert!(t.build(&base).is_err());
        let t: TwinFile = serde_json::from_str(r#"{"kind": "reparameterize", "map": {"kind": "swap", "a": 0, "b": 1, "labels": 2}}"#).unwrap();
        assert!(t.build(&base).is_err());
    }
}
