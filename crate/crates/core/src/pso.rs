//! Particle swarm optimization over bounded continuous variables.
//!
//! [`optimize_bounded`] is the generic engine (maximization). [`DesignSpace`]
//! maps a catalyst design problem onto it: categorical choices are fixed and
//! nine continuous dimensions are searched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::surrogate::{CatalystDesign, Prediction, Surrogate, SurrogateError};
use crate::thermo::FeedComposition;

pub const STAGNATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsoError {
    #[error("infeasible design space: {0}")]
    InfeasibleSpace(String),
    #[error("invalid PSO configuration: {0}")]
    InvalidConfig(String),
    #[error("objective failed at every evaluated point: {0}")]
    ObjectiveError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub max_iters: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    /// Stop after this many consecutive iterations without a gbest gain of
    /// at least 1e-9. Zero disables the check.
    pub stagnation_window: usize,
    /// Objective is `conversion - risk_lambda * uncertainty`.
    pub risk_lambda: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 40,
            max_iters: 300,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 42,
            stagnation_window: 50,
            risk_lambda: 0.0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), PsoError> {
        if self.swarm_size == 0 || self.max_iters == 0 {
            return Err(PsoError::InvalidConfig("swarm_size and max_iters must be at least 1".into()));
        }
        for (name, v) in [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PsoError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.risk_lambda >= 0.0 && self.risk_lambda.is_finite()) {
            return Err(PsoError::InvalidConfig("risk_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a generic run.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    pub iterations_used: usize,
    /// gbest value after each iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Called after each iteration with `(iteration, max_iters, best_value)`.
pub type Progress<'a> = &'a (dyn Fn(usize, usize, f64) + Sync);

fn check_bounds(bounds: &[(f64, f64)]) -> Result<(), PsoError> {
    if bounds.is_empty() {
        return Err(PsoError::InfeasibleSpace("no dimensions".into()));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(PsoError::InfeasibleSpace(format!("dimension {i}: bounds ({lo}, {hi})")));
        }
    }
    Ok(())
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Maximizes `objective` inside `bounds`. `repair` runs after every clamp and
/// must keep points inside the bounds. Objective errors and NaN count as −∞.
pub fn optimize_bounded<F, R>(
    bounds: &[(f64, f64)],
    repair: R,
    objective: F,
    cfg: &PsoConfig,
    progress: Option<Progress<'_>>,
) -> Result<PsoOutcome, PsoError>
where
    F: Fn(&[f64]) -> Result<f64, String> + Sync,
    R: Fn(&mut [f64]),
{
    cfg.validate()?;
    check_bounds(bounds)?;
    let dim = bounds.len();
    let n = cfg.swarm_size;
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pos: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut p: Vec<f64> = bounds.iter().map(|&(lo, hi)| sample(&mut rng, lo, hi)).collect();
            repair(&mut p);
            p
        })
        .collect();
    let mut vel: Vec<Vec<f64>> =
        (0..n).map(|_| vmax.iter().map(|&v| 0.1 * sample(&mut rng, -v, v)).collect()).collect();

    let evaluate = |pos: &[Vec<f64>]| -> Vec<(f64, Option<String>)> {
        pos.par_iter()
            .map(|p| match objective(p) {
                Ok(v) if !v.is_nan() => (v, None),
                Ok(_) => (f64::NEG_INFINITY, Some("objective returned NaN".into())),
                Err(e) => (f64::NEG_INFINITY, Some(e)),
            })
            .collect()
    };

    let mut pbest = pos.clone();
    let mut pbest_val = vec![f64::NEG_INFINITY; n];
    let mut gbest = pos[0].clone();
    let mut gbest_val = f64::NEG_INFINITY;
    let mut last_error = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut stale = 0;

    for iter in 0..cfg.max_iters {
        if iter > 0 {
            for i in 0..n {
                for d in 0..dim {
                    let r1: f64 = rng.random();
                    let r2: f64 = rng.random();
                    let v = cfg.inertia * vel[i][d]
                        + cfg.cognitive * r1 * (pbest[i][d] - pos[i][d])
                        + cfg.social * r2 * (gbest[d] - pos[i][d]);
                    vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                    let x = pos[i][d] + vel[i][d];
                    let (lo, hi) = bounds[d];
                    if x < lo || x > hi {
                        pos[i][d] = x.clamp(lo, hi);
                        vel[i][d] = 0.0;
                    } else {
                        pos[i][d] = x;
                    }
                }
                repair(&mut pos[i]);
            }
        }

        let values = evaluate(&pos);
        evaluations += n;
        let before = gbest_val;
        for (i, (v, err)) in values.into_iter().enumerate() {
            if err.is_some() {
                last_error = err;
            }
            if v > pbest_val[i] {
                pbest_val[i] = v;
                pbest[i].clone_from(&pos[i]);
            }
            if v > gbest_val {
                gbest_val = v;
                gbest.clone_from(&pos[i]);
            }
        }
        trace.push(gbest_val);
        if let Some(cb) = progress {
            cb(iter + 1, cfg.max_iters, gbest_val);
        }

        let gained = if before == f64::NEG_INFINITY { gbest_val > before } else { gbest_val - before >= STAGNATION_TOL };
        stale = if gained { 0 } else { stale + 1 };
        if cfg.stagnation_window > 0 && stale >= cfg.stagnation_window {
            break;
        }
    }

    if gbest_val == f64::NEG_INFINITY {
        return Err(PsoError::ObjectiveError(last_error.unwrap_or_else(|| "objective is -inf everywhere".into())));
    }
    Ok(PsoOutcome { best_position: gbest, best_value: gbest_val, iterations_used: trace.len(), trace, evaluations })
}

/// Scales the excess of `x[idx]` above their lower bounds so their sum does
/// not exceed `cap`. With zero lower bounds this is a plain proportional
/// rescale.
fn cap_sum(x: &mut [f64], bounds: &[(f64, f64)], idx: &[usize], cap: f64) {
    let sum: f64 = idx.iter().map(|&i| x[i]).sum();
    if sum <= cap {
        return;
    }
    let floor: f64 = idx.iter().map(|&i| bounds[i].0).sum();
    let excess: f64 = sum - floor;
    let scale = if excess > 0.0 { ((cap - floor) / excess).max(0.0) } else { 0.0 };
    for &i in idx {
        let lo = bounds[i].0;
        x[i] = (lo + (x[i] - lo) * scale).clamp(lo, bounds[i].1);
    }
}

pub const DIM_BASE_WT: usize = 0;
pub const DIM_PROMOTER_WT: usize = 1;
pub const DIM_TEMPERATURE: usize = 2;
pub const DIM_Y_CO: usize = 3;
pub const DIM_Y_H2O: usize = 4;
pub const DIM_Y_CO2: usize = 5;
pub const DIM_Y_H2: usize = 6;
pub const DIM_TIME_ON_STREAM: usize = 7;
pub const DIM_W_F: usize = 8;
pub const DESIGN_DIMS: usize = 9;

pub const DIMENSION_NAMES: [&str; DESIGN_DIMS] =
    ["base_wt", "promoter_wt", "temperature_c", "y_co", "y_h2o", "y_co2", "y_h2", "time_on_stream_h", "w_f_ratio"];

const COMPOSITION: [usize; 2] = [DIM_BASE_WT, DIM_PROMOTER_WT];
const FEED: [usize; 4] = [DIM_Y_CO, DIM_Y_H2O, DIM_Y_CO2, DIM_Y_H2];

/// Categorical choices plus bounds for
/// `[base wt%, promoter wt%, T °C, y_co, y_h2o, y_co2, y_h2, time on stream h, W/F]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub base_metal: String,
    pub support: String,
    pub promoter: Option<String>,
    pub prep_method: String,
    pub bounds: [(f64, f64); DESIGN_DIMS],
}

impl DesignSpace {
    pub fn validate(&self) -> Result<(), PsoError> {
        check_bounds(&self.bounds)?;
        for d in COMPOSITION {
            let (lo, hi) = self.bounds[d];
            if lo < 0.0 || hi > 100.0 {
                return Err(PsoError::InfeasibleSpace(format!("{} bounds must lie in [0, 100]", DIMENSION_NAMES[d])));
            }
        }
        for d in FEED {
            let (lo, hi) = self.bounds[d];
            if lo < 0.0 || hi > 1.0 {
                return Err(PsoError::InfeasibleSpace(format!("{} bounds must lie in [0, 1]", DIMENSION_NAMES[d])));
            }
        }
        if self.promoter.is_none() && self.bounds[DIM_PROMOTER_WT] != (0.0, 0.0) {
            return Err(PsoError::InfeasibleSpace("promoter wt% must be pinned to 0 without a promoter".into()));
        }
        let comp_floor: f64 = COMPOSITION.iter().map(|&d| self.bounds[d].0).sum();
        if comp_floor > 100.0 {
            return Err(PsoError::InfeasibleSpace(format!("minimum metal loading {comp_floor} wt% exceeds 100")));
        }
        let feed_floor: f64 = FEED.iter().map(|&d| self.bounds[d].0).sum();
        if feed_floor > 1.0 {
            return Err(PsoError::InfeasibleSpace(format!("minimum feed fractions sum to {feed_floor}")));
        }
        if self.bounds[DIM_Y_CO].1 <= 0.0 {
            return Err(PsoError::InfeasibleSpace("CO fraction must be allowed above 0".into()));
        }
        Ok(())
    }

    /// Enforces the composition identities: metal loadings at most 100 wt%
    /// and reactant fractions at most 1 (nitrogen takes the balance).
    pub fn repair(&self, x: &mut [f64]) {
        cap_sum(x, &self.bounds, &COMPOSITION, 100.0);
        cap_sum(x, &self.bounds, &FEED, 1.0);
    }

    pub fn design_at(&self, x: &[f64]) -> CatalystDesign {
        let feed = FeedComposition::with_n2_balance(x[DIM_Y_CO], x[DIM_Y_H2O], x[DIM_Y_CO2], x[DIM_Y_H2]);
        CatalystDesign {
            base_metal: self.base_metal.clone(),
            base_wt: x[DIM_BASE_WT],
            promoter: self.promoter.clone(),
            promoter_wt: if self.promoter.is_some() { x[DIM_PROMOTER_WT] } else { 0.0 },
            support: self.support.clone(),
            prep_method: self.prep_method.clone(),
            temperature_c: x[DIM_TEMPERATURE],
            feed: FeedComposition { y_n2: feed.y_n2.max(0.0), ..feed },
            time_on_stream_h: x[DIM_TIME_ON_STREAM],
            w_f_ratio: x[DIM_W_F],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub design: CatalystDesign,
    pub prediction: Prediction,
    pub iterations_used: usize,
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Objective for a design: predicted conversion minus `risk_lambda` times
/// its uncertainty.
pub fn design_objective(surrogate: &Surrogate, design: &CatalystDesign, risk_lambda: f64) -> Result<f64, SurrogateError> {
    let p = surrogate.predict(design)?;
    Ok(p.conversion - risk_lambda * p.uncertainty)
}

/// Searches `space` for the design with the highest objective.
pub fn optimize(
    space: &DesignSpace,
    surrogate: &Surrogate,
    cfg: &PsoConfig,
    progress: Option<Progress<'_>>,
) -> Result<Solution, PsoError> {
    space.validate()?;
    let outcome = optimize_bounded(
        &space.bounds,
        |x| space.repair(x),
        |x| design_objective(surrogate, &space.design_at(x), cfg.risk_lambda).map_err(|e| e.to_string()),
        cfg,
        progress,
    )?;
    let design = space.design_at(&outcome.best_position);
    let prediction = surrogate.predict(&design).map_err(|e| PsoError::ObjectiveError(e.to_string()))?;
    Ok(Solution {
        design,
        prediction,
        iterations_used: outcome.iterations_used,
        trace: outcome.trace,
        evaluations: outcome.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::surrogate::reference_bundle;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sphere(x: &[f64]) -> Result<f64, String> {
        Ok(-x.iter().map(|v| v * v).sum::<f64>())
    }

    fn space() -> DesignSpace {
        DesignSpace {
            base_metal: "Pt".into(),
            support: "CeO2".into(),
            promoter: Some("Ni".into()),
            prep_method: "wi".into(),
            bounds: [(0.5, 10.0), (0.0, 5.0), (300.0, 350.0), (0.01, 0.1), (0.05, 0.3), (0.0, 0.1), (0.0, 0.3), (1.0, 50.0), (0.1, 5.0)],
        }
    }

    #[test]
    fn sphere_converges() {
        let cfg = PsoConfig { swarm_size: 30, max_iters: 200, seed: 42, ..Default::default() };
        let out = optimize_bounded(&[(-5.0, 5.0); 5], |_| {}, sphere, &cfg, None).unwrap();
        assert!(-out.best_value <= 1e-6, "f = {}", -out.best_value);
        assert_eq!(out.evaluations, 30 * out.iterations_used);
    }

    #[test]
    fn degenerate_space_returns_the_point() {
        let b = [(1.5, 1.5), (-2.0, -2.0)];
        let cfg = PsoConfig { swarm_size: 4, max_iters: 10, ..Default::default() };
        let out = optimize_bounded(&b, |_| {}, sphere, &cfg, None).unwrap();
        assert_eq!(out.best_position, vec![1.5, -2.0]);
    }

    #[test]
    fn failing_points_get_negative_infinity() {
        let cfg = PsoConfig { swarm_size: 10, max_iters: 20, ..Default::default() };
        let out = optimize_bounded(
            &[(-1.0, 1.0)],
            |_| {},
            |x: &[f64]| if x[0] < 0.0 { Err("negative".to_string()) } else { Ok(x[0]) },
            &cfg,
            None,
        )
        .unwrap();
        assert!(out.best_position[0] >= 0.0);
        let all_fail = optimize_bounded(&[(-1.0, 1.0)], |_| {}, |_: &[f64]| Err("down".to_string()), &cfg, None);
        assert_eq!(all_fail, Err(PsoError::ObjectiveError("down".into())));
    }

    #[test]
    fn stagnation_stops_early() {
        let cfg = PsoConfig { swarm_size: 5, max_iters: 300, stagnation_window: 7, ..Default::default() };
        let out = optimize_bounded(&[(0.0, 1.0)], |_| {}, |_: &[f64]| Ok(1.0), &cfg, None).unwrap();
        assert_eq!(out.iterations_used, 8);
    }

    #[test]
    fn progress_is_reported_each_iteration() {
        let calls = AtomicUsize::new(0);
        let cb = |_: usize, _: usize, _: f64| {
            calls.fetch_add(1, Ordering::Relaxed);
        };
        let cfg = PsoConfig { swarm_size: 5, max_iters: 12, stagnation_window: 0, ..Default::default() };
        let out = optimize_bounded(&[(-1.0, 1.0)], |_| {}, sphere, &cfg, Some(&cb)).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), out.iterations_used);
        assert_eq!(out.iterations_used, 12);
    }

    #[test]
    fn repair_examples() {
        let mut s = space();
        s.bounds[DIM_BASE_WT] = (0.0, 100.0);
        s.bounds[DIM_PROMOTER_WT] = (0.0, 100.0);
        let mut x = [60.0, 60.0, 320.0, 0.05, 0.1, 0.05, 0.1, 10.0, 1.0];
        s.repair(&mut x);
        assert_eq!((x[0], x[1]), (50.0, 50.0));
        assert_eq!(s.design_at(&x).support_wt(), 0.0);

        let mut y = [5.0, 1.0, 320.0, 0.05, 0.1, 0.05, 0.1, 10.0, 1.0];
        let before = y;
        s.repair(&mut y);
        assert_eq!(y, before);
        let d = s.design_at(&y);
        assert!((d.feed.y_n2 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn inverted_or_overfull_spaces_are_infeasible() {
        let mut s = space();
        s.bounds[DIM_TEMPERATURE] = (350.0, 300.0);
        assert!(matches!(s.validate(), Err(PsoError::InfeasibleSpace(_))));
        let mut s = space();
        s.bounds[DIM_Y_H2O] = (0.5, 0.6);
        s.bounds[DIM_Y_H2] = (0.5, 0.6);
        assert!(matches!(s.validate(), Err(PsoError::InfeasibleSpace(_))));
    }

    #[test]
    fn design_search_is_deterministic_and_bounded() {
        let sur = Surrogate::new(reference_bundle(&Catalog::default())).unwrap();
        let cfg = PsoConfig { swarm_size: 12, max_iters: 25, ..Default::default() };
        let a = optimize(&space(), &sur, &cfg, None).unwrap();
        let b = optimize(&space(), &sur, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.prediction.conversion <= a.prediction.x_eq + 1e-9);
        assert_eq!(a.evaluations, 12 * a.iterations_used);
    }

    proptest! {
        #[test]
        fn repaired_points_are_feasible(raw in proptest::array::uniform9(0.0f64..1.0)) {
            let s = space();
            let mut x: Vec<f64> = raw.iter().zip(s.bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
            s.repair(&mut x);
            for (v, (lo, hi)) in x.iter().zip(s.bounds) {
                prop_assert!(*v >= lo && *v <= hi);
            }
            let d = s.design_at(&x);
            prop_assert!(d.base_wt + d.promoter_wt <= 100.0 + 1e-9);
            prop_assert!((d.feed.fractions().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.feed.y_n2 >= 0.0);
        }
    }
}
