//! Inverse design: researcher settings in, best catalyst and a short
//! explanation out.

pub mod jobs;
pub mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use jobs::{InverseJob, JobManager, JobProgress, JobStatus, DEFAULT_JOB_CAPACITY, DEFAULT_MAX_CONCURRENT_JOBS};
pub use report::{render_report, round_composition, summary_sentence, word_count, InverseReport, REPORT_SCHEMA_VERSION};

use crate::catalog::{Catalog, Group};
use crate::llm::LanguageModel;
use crate::pso::{self, DesignSpace, PsoConfig, PsoError, Progress, Solution, DESIGN_DIMS};
use crate::surrogate::Surrogate;
use crate::thermo::{KELVIN_OFFSET, T_MAX_K, T_MIN_K};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InverseError {
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error(transparent)]
    Pso(#[from] PsoError),
}

/// Optional `(lo, hi)` overrides for the searched dimensions other than
/// temperature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundOverrides {
    pub base_wt: Option<(f64, f64)>,
    pub promoter_wt: Option<(f64, f64)>,
    pub y_co: Option<(f64, f64)>,
    pub y_h2o: Option<(f64, f64)>,
    pub y_co2: Option<(f64, f64)>,
    pub y_h2: Option<(f64, f64)>,
    pub time_on_stream_h: Option<(f64, f64)>,
    pub w_f_ratio: Option<(f64, f64)>,
}

/// What the researcher fills in: categorical choices and a temperature
/// window in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSettings {
    pub base_metal: String,
    pub support: String,
    #[serde(default)]
    pub promoter: Option<String>,
    pub prep_method: String,
    pub temperature_range: (f64, f64),
    #[serde(default)]
    pub bounds: BoundOverrides,
}

pub const DEFAULT_BASE_WT: (f64, f64) = (0.5, 10.0);
pub const DEFAULT_PROMOTER_WT: (f64, f64) = (0.5, 10.0);
pub const DEFAULT_Y_CO: (f64, f64) = (0.001, 0.1);
pub const DEFAULT_Y_H2O: (f64, f64) = (0.01, 0.3);
pub const DEFAULT_Y_CO2: (f64, f64) = (0.0, 0.1);
pub const DEFAULT_Y_H2: (f64, f64) = (0.0, 0.3);
pub const DEFAULT_TIME_ON_STREAM: (f64, f64) = (1.0, 100.0);
pub const DEFAULT_W_F: (f64, f64) = (0.1, 10.0);

impl ParameterSettings {
    pub fn from_toml(text: &str) -> Result<Self, InverseError> {
        toml::from_str(text).map_err(|e| InverseError::InvalidSettings(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InverseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| InverseError::InvalidSettings(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolves catalog names to ids and assembles the search space.
    pub fn design_space(&self, catalog: &Catalog) -> Result<DesignSpace, InverseError> {
        let resolve = |group: Group, key: &str| {
            catalog
                .find(group, key.trim())
                .map(|e| e.id.clone())
                .ok_or_else(|| InverseError::InvalidSettings(format!("unknown {} `{key}`", group.feature_prefix())))
        };
        let base_metal = resolve(Group::BaseMetal, &self.base_metal)?;
        let support = resolve(Group::Support, &self.support)?;
        let promoter = match self.promoter.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(p) => Some(resolve(Group::Promoter, p)?),
        };
        let prep_method = resolve(Group::PrepMethod, &self.prep_method)?;

        let (t_lo, t_hi) = self.temperature_range;
        if !(t_lo.is_finite() && t_hi.is_finite()) || t_lo > t_hi {
            return Err(InverseError::InvalidSettings(format!("temperature range ({t_lo}, {t_hi}) is inverted or not finite")));
        }
        let (t_min, t_max) = (T_MIN_K - KELVIN_OFFSET, T_MAX_K - KELVIN_OFFSET);
        if t_lo < t_min || t_hi > t_max {
            return Err(InverseError::InvalidSettings(format!(
                "temperature range ({t_lo}, {t_hi}) °C leaves the supported [{t_min:.2}, {t_max:.2}] °C"
            )));
        }

        let o = &self.bounds;
        let promoter_wt = if promoter.is_some() { o.promoter_wt.unwrap_or(DEFAULT_PROMOTER_WT) } else { (0.0, 0.0) };
        if promoter.is_none() && o.promoter_wt.is_some_and(|b| b != (0.0, 0.0)) {
            return Err(InverseError::InvalidSettings("promoter_wt bounds given without a promoter".into()));
        }
        let bounds: [(f64, f64); DESIGN_DIMS] = [
            o.base_wt.unwrap_or(DEFAULT_BASE_WT),
            promoter_wt,
            (t_lo, t_hi),
            o.y_co.unwrap_or(DEFAULT_Y_CO),
            o.y_h2o.unwrap_or(DEFAULT_Y_H2O),
            o.y_co2.unwrap_or(DEFAULT_Y_CO2),
            o.y_h2.unwrap_or(DEFAULT_Y_H2),
            o.time_on_stream_h.unwrap_or(DEFAULT_TIME_ON_STREAM),
            o.w_f_ratio.unwrap_or(DEFAULT_W_F),
        ];
        for (name, (lo, hi)) in pso::DIMENSION_NAMES.iter().zip(bounds) {
            if lo > hi {
                return Err(InverseError::InvalidSettings(format!("{name} range ({lo}, {hi}) is inverted")));
            }
        }
        if bounds[pso::DIM_TIME_ON_STREAM].0 < 0.0 || bounds[pso::DIM_W_F].0 < 0.0 {
            return Err(InverseError::InvalidSettings("time on stream and W/F must be non-negative".into()));
        }
        let space = DesignSpace { base_metal, support, promoter, prep_method, bounds };
        space.validate().map_err(|e| InverseError::InvalidSettings(e.to_string()))?;
        Ok(space)
    }

    /// Full validation, including that the model knows every chosen option.
    pub fn validate(&self, catalog: &Catalog, surrogate: &Surrogate) -> Result<DesignSpace, InverseError> {
        let space = self.design_space(catalog)?;
        let mid: Vec<f64> = space.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let mut mid = mid;
        space.repair(&mut mid);
        surrogate.encode(&space.design_at(&mid)).map_err(|e| InverseError::InvalidSettings(e.to_string()))?;
        Ok(space)
    }
}

/// Runs the search in the calling thread.
pub fn solve(
    settings: &ParameterSettings,
    catalog: &Catalog,
    surrogate: &Surrogate,
    cfg: &PsoConfig,
    progress: Option<Progress<'_>>,
) -> Result<Solution, InverseError> {
    let space = settings.validate(catalog, surrogate)?;
    Ok(pso::optimize(&space, surrogate, cfg, progress)?)
}

/// Search plus report, without the job queue.
pub async fn run_inverse(
    settings: &ParameterSettings,
    catalog: &Catalog,
    surrogate: &Surrogate,
    cfg: &PsoConfig,
    llm: Option<&dyn LanguageModel>,
) -> Result<InverseReport, InverseError> {
    let solution = solve(settings, catalog, surrogate, cfg, None)?;
    Ok(render_report(&solution, catalog, llm).await)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::reference_bundle;

    fn settings(lo: f64, hi: f64) -> ParameterSettings {
        ParameterSettings {
            base_metal: "Pt".into(),
            support: "CeO2".into(),
            promoter: Some("Ni".into()),
            prep_method: "wet impregnation".into(),
            temperature_range: (lo, hi),
            bounds: BoundOverrides::default(),
        }
    }

    #[test]
    fn paper_settings_are_accepted() {
        let cat = Catalog::default();
        let sur = Surrogate::new(reference_bundle(&cat)).unwrap();
        let space = settings(300.0, 350.0).validate(&cat, &sur).unwrap();
        assert_eq!(space.prep_method, "wi");
        assert_eq!(space.bounds[pso::DIM_TEMPERATURE], (300.0, 350.0));

        let alloy = ParameterSettings {
            base_metal: "platinum".into(),
            support: "α-MoC".into(),
            promoter: Some("Au".into()),
            prep_method: "IWI".into(),
            temperature_range: (150.0, 299.0),
            bounds: BoundOverrides::default(),
        };
        let space = alloy.validate(&cat, &sur).unwrap();
        assert_eq!(space.support, "alpha-MoC");
    }

    #[test]
    fn inverted_range_is_invalid() {
        let err = settings(350.0, 300.0).design_space(&Catalog::default()).unwrap_err();
        assert!(matches!(err, InverseError::InvalidSettings(_)));
    }

    #[test]
    fn unknown_ids_are_invalid() {
        let mut s = settings(300.0, 350.0);
        s.support = "Unobtainium".into();
        assert!(matches!(s.design_space(&Catalog::default()), Err(InverseError::InvalidSettings(_))));
    }

    #[test]
    fn settings_parse_from_toml() {
        let s = ParameterSettings::from_toml(
            "base_metal = 'Pt'\nsupport = 'CeO2'\npromoter = 'Ni'\nprep_method = 'wi'\ntemperature_range = [300.0, 350.0]\n[bounds]\ny_co = [0.01, 0.02]\n",
        )
        .unwrap();
        assert_eq!(s.bounds.y_co, Some((0.01, 0.02)));
        assert!(ParameterSettings::from_toml("base_metal = 'Pt'\nextra = 1").is_err());
    }
}
