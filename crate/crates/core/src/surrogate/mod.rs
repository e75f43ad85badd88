//! Inference side of the theory-guided conversion model.
//!
//! Each ensemble member produces a logit `z`; its conversion is
//! `x_eq * sigmoid(z)`, so no member can ever exceed the equilibrium
//! conversion. The prediction is the ensemble mean and the uncertainty the
//! population standard deviation.

pub mod bundle;

use serde::{Deserialize, Serialize};

pub use bundle::{reference_bundle, schema_for, Activation, BundleError, Layer, ModelBundle, Network, CONDITION_FEATURES};

use crate::catalog::Group;
use crate::thermo::{self, FeedComposition, ThermoError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurrogateError {
    #[error("catalog id `{id}` has no `{prefix}:` slot in the model schema")]
    UnknownCatalogId { prefix: &'static str, id: String },
    #[error("model schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error("ensemble member {0} produced a non-finite logit")]
    NonFiniteActivation(usize),
}

/// A fully specified catalyst and its reaction conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalystDesign {
    pub base_metal: String,
    /// wt%
    pub base_wt: f64,
    pub promoter: Option<String>,
    /// wt%; zero without a promoter
    pub promoter_wt: f64,
    pub support: String,
    pub prep_method: String,
    pub temperature_c: f64,
    pub feed: FeedComposition,
    pub time_on_stream_h: f64,
    /// catalyst weight over feed flow, mg·min/ml
    pub w_f_ratio: f64,
}

impl CatalystDesign {
    pub fn support_wt(&self) -> f64 {
        100.0 - self.base_wt - self.promoter_wt
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.base_wt < 0.0 || self.promoter_wt < 0.0 {
            return Err(SurrogateError::InvalidDesign("negative wt%".into()));
        }
        if self.base_wt + self.promoter_wt > 100.0 + 1e-9 {
            return Err(SurrogateError::InvalidDesign("metal loadings exceed 100 wt%".into()));
        }
        if self.promoter.is_none() && self.promoter_wt != 0.0 {
            return Err(SurrogateError::InvalidDesign("promoter loading without a promoter".into()));
        }
        self.feed.validate()?;
        Ok(())
    }
}

/// Percentages: conversion and equilibrium conversion in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub conversion: f64,
    pub uncertainty: f64,
    pub x_eq: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Looks up slot indices once so repeated predictions skip string work.
#[derive(Debug, Clone)]
pub struct Surrogate {
    bundle: ModelBundle,
    conditions: [usize; 8],
}

impl Surrogate {
    pub fn new(bundle: ModelBundle) -> Result<Self, SurrogateError> {
        bundle.validate().map_err(|e| SurrogateError::SchemaMismatch(e.to_string()))?;
        let mut conditions = [0usize; 8];
        for (slot, name) in conditions.iter_mut().zip(CONDITION_FEATURES) {
            *slot = bundle
                .feature_index(name)
                .ok_or_else(|| SurrogateError::SchemaMismatch(format!("schema lacks `{name}`")))?;
        }
        Ok(Self { bundle, conditions })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    fn slot(&self, group: Group, id: &str) -> Result<usize, SurrogateError> {
        let prefix = group.feature_prefix();
        self.bundle
            .feature_index(&format!("{prefix}:{id}"))
            .ok_or_else(|| SurrogateError::UnknownCatalogId { prefix, id: id.to_string() })
    }

    /// Raw (unnormalized) feature vector: wt% in composition slots, 1 in the
    /// preparation slot, conditions in their slots, zero elsewhere.
    pub fn encode_raw(&self, design: &CatalystDesign) -> Result<Vec<f64>, SurrogateError> {
        let mut x = vec![0.0; self.bundle.feature_schema.len()];
        x[self.slot(Group::BaseMetal, &design.base_metal)?] = design.base_wt;
        if let Some(p) = &design.promoter {
            x[self.slot(Group::Promoter, p)?] += design.promoter_wt;
        }
        x[self.slot(Group::Support, &design.support)?] = design.support_wt();
        x[self.slot(Group::PrepMethod, &design.prep_method)?] = 1.0;
        let f = &design.feed;
        let values = [design.temperature_c, f.y_co, f.y_h2o, f.y_co2, f.y_h2, f.y_n2, design.time_on_stream_h, design.w_f_ratio];
        for (&slot, v) in self.conditions.iter().zip(values) {
            x[slot] = v;
        }
        Ok(x)
    }

    /// Normalized feature vector fed to the networks.
    pub fn encode(&self, design: &CatalystDesign) -> Result<Vec<f64>, SurrogateError> {
        let mut x = self.encode_raw(design)?;
        for ((v, m), s) in x.iter_mut().zip(&self.bundle.mean).zip(&self.bundle.std) {
            *v = (*v - m) / s;
        }
        Ok(x)
    }

    /// Member logits for an encoded input.
    pub fn logits(&self, encoded: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        self.bundle
            .ensemble
            .iter()
            .enumerate()
            .map(|(i, net)| {
                let z = net.forward(encoded);
                if z.is_nan() {
                    Err(SurrogateError::NonFiniteActivation(i))
                } else {
                    Ok(z)
                }
            })
            .collect()
    }

    pub fn predict(&self, design: &CatalystDesign) -> Result<Prediction, SurrogateError> {
        design.validate()?;
        let eq = thermo::equilibrium_conversion_celsius(&design.feed, design.temperature_c)?;
        let logits = self.logits(&self.encode(design)?)?;
        Ok(combine(&logits, 100.0 * eq.x_eq))
    }
}

/// Ensemble combination under the equilibrium ceiling `x_eq_pct`.
pub fn combine(logits: &[f64], x_eq_pct: f64) -> Prediction {
    let members: Vec<f64> = logits.iter().map(|&z| x_eq_pct * sigmoid(z)).collect();
    if members.iter().all(|c| c.to_bits() == members[0].to_bits()) {
        return Prediction { conversion: members[0], uncertainty: 0.0, x_eq: x_eq_pct };
    }
    let n = members.len() as f64;
    let mean = members.iter().sum::<f64>() / n;
    let var = members.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Prediction { conversion: mean.clamp(0.0, x_eq_pct), uncertainty: var.sqrt(), x_eq: x_eq_pct }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;

    fn surrogate() -> Surrogate {
        Surrogate::new(reference_bundle(&Catalog::default())).unwrap()
    }

    fn pt_design() -> CatalystDesign {
        CatalystDesign {
            base_metal: "Pt".into(),
            base_wt: 4.26,
            promoter: None,
            promoter_wt: 0.0,
            support: "alpha-MoC".into(),
            prep_method: "iwi".into(),
            temperature_c: 200.0,
            feed: FeedComposition { y_co: 0.001, y_h2o: 0.0618, y_co2: 0.05, y_h2: 0.0015, y_n2: 0.8857 },
            time_on_stream_h: 1.0,
            w_f_ratio: 1.0,
        }
    }

    #[test]
    fn single_metal_sets_one_slot() {
        let s = surrogate();
        let raw = s.encode_raw(&pt_design()).unwrap();
        let metal_slots: Vec<usize> =
            s.bundle().feature_schema.iter().enumerate().filter(|(_, n)| n.starts_with("metal:")).map(|(i, _)| i).collect();
        let nonzero: Vec<usize> = metal_slots.iter().copied().filter(|&i| raw[i] != 0.0).collect();
        let pt = s.bundle().feature_index("metal:Pt").unwrap();
        assert_eq!(nonzero, vec![pt]);
        let enc = s.encode(&pt_design()).unwrap();
        let b = s.bundle();
        assert_eq!(enc[pt], (4.26 - b.mean[pt]) / b.std[pt]);
    }

    #[test]
    fn absent_promoter_leaves_promoter_slots_at_normalized_zero() {
        let s = surrogate();
        let enc = s.encode(&pt_design()).unwrap();
        let b = s.bundle();
        for (i, name) in b.feature_schema.iter().enumerate() {
            if name.starts_with("promoter:") {
                assert_eq!(enc[i], (0.0 - b.mean[i]) / b.std[i]);
            }
        }
    }

    #[test]
    fn unknown_support_is_rejected() {
        let mut d = pt_design();
        d.support = "Unobtainium".into();
        assert_eq!(
            surrogate().encode(&d),
            Err(SurrogateError::UnknownCatalogId { prefix: "support", id: "Unobtainium".into() })
        );
    }

    #[test]
    fn saturated_logits_reach_equilibrium() {
        let p = combine(&[f64::INFINITY; 5], 87.5);
        assert_eq!(p.conversion, 87.5);
        assert_eq!(p.uncertainty, 0.0);
    }

    #[test]
    fn identical_members_have_zero_spread() {
        let p = combine(&[0.37; 5], 91.3);
        assert_eq!(p.uncertainty, 0.0);
        let q = combine(&[0.37, 0.37, 0.38], 91.3);
        assert!(q.uncertainty > 0.0);
    }

    #[test]
    fn prediction_respects_ceiling_and_is_deterministic() {
        let s = surrogate();
        let a = s.predict(&pt_design()).unwrap();
        let b = s.predict(&pt_design()).unwrap();
        assert_eq!(a.conversion.to_bits(), b.conversion.to_bits());
        assert!(a.conversion >= 0.0 && a.conversion <= a.x_eq);
        assert!(a.uncertainty >= 0.0);
    }

    #[test]
    fn schema_without_conditions_is_rejected() {
        let mut b = reference_bundle(&Catalog::default());
        let i = b.feature_index("w_f_ratio").unwrap();
        b.feature_schema[i] = "mystery".into();
        assert!(matches!(Surrogate::new(b), Err(SurrogateError::SchemaMismatch(_))));
    }
}
