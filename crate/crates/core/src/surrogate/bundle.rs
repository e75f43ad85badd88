//! Model bundle: feature schema, per-feature normalization and an ensemble
//! of small dense networks. Stored as JSON with base64 little-endian f64
//! payloads so the weights round-trip bit-exactly.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Group};

pub const BUNDLE_FORMAT: &str = "acewgs-model-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const REFERENCE_SEED: u64 = 0x5745_5347_2024;
pub const REFERENCE_MEMBERS: usize = 5;

/// Reaction-condition slots every schema must contain, in this order after
/// the categorical slots.
pub const CONDITION_FEATURES: [&str; 8] =
    ["temperature_c", "y_co", "y_h2o", "y_co2", "y_h2", "y_n2", "time_on_stream_h", "w_f_ratio"];

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("bundle format error: {0}")]
    Format(String),
    #[error("member {member} layer {layer}: expects {got} inputs but previous layer yields {expected}")]
    DimensionChainBroken { member: usize, layer: usize, expected: usize, got: usize },
    #[error("cannot access bundle {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// `y = act(W x + b)` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| {
                let s = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                match self.activation {
                    Activation::Relu => s.max(0.0),
                    Activation::Linear => s,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Returns the single output logit.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub feature_schema: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub ensemble: Vec<Network>,
    pub description: String,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<(), BundleError> {
        let n = self.feature_schema.len();
        if n == 0 {
            return Err(BundleError::Format("empty feature schema".into()));
        }
        if self.mean.len() != n || self.std.len() != n {
            return Err(BundleError::Format(format!(
                "normalization has {} means and {} stds for {n} features",
                self.mean.len(),
                self.std.len()
            )));
        }
        for (name, (&m, &s)) in self.feature_schema.iter().zip(self.mean.iter().zip(&self.std)) {
            if !m.is_finite() {
                return Err(BundleError::Format(format!("non-finite mean for {name}")));
            }
            if !(s > 0.0 && s.is_finite()) {
                return Err(BundleError::Format(format!("std for {name} must be positive, got {s}")));
            }
        }
        if self.ensemble.is_empty() {
            return Err(BundleError::Format("ensemble has no members".into()));
        }
        for (mi, net) in self.ensemble.iter().enumerate() {
            if net.layers.is_empty() {
                return Err(BundleError::Format(format!("member {mi} has no layers")));
            }
            let mut width = n;
            for (li, layer) in net.layers.iter().enumerate() {
                if layer.inputs != width {
                    return Err(BundleError::DimensionChainBroken { member: mi, layer: li, expected: width, got: layer.inputs });
                }
                if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                    return Err(BundleError::Format(format!("member {mi} layer {li}: weight/bias sizes disagree with shape")));
                }
                if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                    return Err(BundleError::Format(format!("member {mi} layer {li}: non-finite parameter")));
                }
                width = layer.outputs;
            }
            if width != 1 {
                return Err(BundleError::Format(format!("member {mi} ends with {width} outputs, expected 1")));
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_schema.iter().position(|f| f == name)
    }

    pub fn to_json(&self) -> String {
        let file = BundleFile {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            description: self.description.clone(),
            feature_schema: self.feature_schema.clone(),
            normalization: NormFile { mean: encode_f64(&self.mean), std: encode_f64(&self.std) },
            ensemble: self
                .ensemble
                .iter()
                .map(|net| MemberFile {
                    layers: net
                        .layers
                        .iter()
                        .map(|l| LayerFile {
                            inputs: l.inputs,
                            outputs: l.outputs,
                            activation: l.activation,
                            weights: encode_f64(&l.weights),
                            bias: encode_f64(&l.bias),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let file: BundleFile = serde_json::from_str(text).map_err(|e| BundleError::Format(e.to_string()))?;
        if file.format != BUNDLE_FORMAT {
            return Err(BundleError::Format(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != BUNDLE_VERSION {
            return Err(BundleError::Format(format!("unsupported version {}", file.version)));
        }
        let mut ensemble = Vec::with_capacity(file.ensemble.len());
        for member in file.ensemble {
            let mut layers = Vec::with_capacity(member.layers.len());
            for l in member.layers {
                layers.push(Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: decode_f64(&l.weights)?,
                    bias: decode_f64(&l.bias)?,
                    activation: l.activation,
                });
            }
            ensemble.push(Network { layers });
        }
        let bundle = ModelBundle {
            feature_schema: file.feature_schema,
            mean: decode_f64(&file.normalization.mean)?,
            std: decode_f64(&file.normalization.std)?,
            ensemble,
            description: file.description,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| BundleError::Io { path: path.display().to_string(), source })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format: String,
    version: u32,
    #[serde(default)]
    description: String,
    feature_schema: Vec<String>,
    normalization: NormFile,
    ensemble: Vec<MemberFile>,
}

#[derive(Serialize, Deserialize)]
struct NormFile {
    mean: String,
    std: String,
}

#[derive(Serialize, Deserialize)]
struct MemberFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: String,
    bias: String,
}

fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64(text: &str) -> Result<Vec<f64>, BundleError> {
    let bytes = B64.decode(text).map_err(|e| BundleError::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(BundleError::Format("payload length is not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
}

/// Feature names for a catalog: one slot per categorical option, then the
/// reaction conditions.
pub fn schema_for(catalog: &Catalog) -> Vec<String> {
    let mut schema = Vec::new();
    for group in [Group::BaseMetal, Group::Support, Group::Promoter, Group::PrepMethod] {
        for e in catalog.group(group) {
            schema.push(format!("{}:{}", group.feature_prefix(), e.id));
        }
    }
    schema.extend(CONDITION_FEATURES.iter().map(|s| s.to_string()));
    schema
}

fn reference_scale(name: &str) -> (f64, f64) {
    match name.split_once(':').map(|(p, _)| p) {
        Some("metal") => (1.0, 3.0),
        Some("promoter") => (0.5, 2.0),
        Some("support") => (9.0, 27.0),
        Some("prep") => (0.12, 0.33),
        _ => match name {
            "temperature_c" => (300.0, 100.0),
            "y_co" => (0.05, 0.04),
            "y_h2o" => (0.2, 0.15),
            "y_co2" => (0.05, 0.05),
            "y_h2" => (0.1, 0.15),
            "y_n2" => (0.6, 0.25),
            "time_on_stream_h" => (20.0, 30.0),
            _ => (2.0, 3.0),
        },
    }
}

/// Deterministic stand-in weights for the unpublished trained model: a
/// fixed-seed ensemble of `inputs -> 24 -> 12 -> 1` ReLU networks.
pub fn reference_bundle(catalog: &Catalog) -> ModelBundle {
    let schema = schema_for(catalog);
    let (mean, std): (Vec<f64>, Vec<f64>) = schema.iter().map(|n| reference_scale(n)).unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
    let widths = [schema.len(), 24, 12, 1];
    let ensemble = (0..REFERENCE_MEMBERS)
        .map(|_| Network {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let (inputs, outputs) = (w[0], w[1]);
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    let last = i + 2 == widths.len();
                    Layer {
                        inputs,
                        outputs,
                        weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
                        bias: (0..outputs).map(|_| if last { 1.0 + rng.random_range(-0.25..0.25) } else { rng.random_range(0.0..0.1) }).collect(),
                        activation: if last { Activation::Linear } else { Activation::Relu },
                    }
                })
                .collect(),
        })
        .collect();
    ModelBundle {
        feature_schema: schema,
        mean,
        std,
        ensemble,
        description: format!(
            "reference ensemble generated from seed {REFERENCE_SEED:#x}; placeholder weights, not a trained model"
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_bundle_round_trips_bit_exactly() {
        let b = reference_bundle(&Catalog::default());
        b.validate().unwrap();
        let back = ModelBundle::from_json(&b.to_json()).unwrap();
        assert_eq!(back, b);
        for (x, y) in back.ensemble[0].layers[0].weights.iter().zip(&b.ensemble[0].layers[0].weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn committed_reference_bundle_matches_generator() {
        let committed = include_str!("../../../../models/reference.bundle.json");
        assert_eq!(committed, reference_bundle(&Catalog::default()).to_json());
    }

    #[test]
    fn broken_chain_is_detected() {
        let mut b = reference_bundle(&Catalog::default());
        let l1 = &mut b.ensemble[0].layers[1];
        l1.inputs = 8;
        l1.weights.truncate(8 * l1.outputs);
        assert!(matches!(b.validate(), Err(BundleError::DimensionChainBroken { member: 0, layer: 1, expected: 24, got: 8 })));
    }

    #[test]
    fn zero_std_is_a_format_error() {
        let mut b = reference_bundle(&Catalog::default());
        b.std[3] = 0.0;
        let err = ModelBundle::from_json(&b.to_json()).unwrap_err();
        assert!(matches!(err, BundleError::Format(_)), "{err}");
    }

    #[test]
    fn wrong_tag_is_rejected() {
        let json = reference_bundle(&Catalog::default()).to_json().replace(BUNDLE_FORMAT, "other");
        assert!(matches!(ModelBundle::from_json(&json), Err(BundleError::Format(_))));
    }
}
