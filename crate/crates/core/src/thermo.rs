//! Water-gas-shift equilibrium: CO + H2O <=> CO2 + H2.
//!
//! The equilibrium constant uses the correlation `K(T) = exp(4577.8/T - 4.33)`
//! (T in kelvin). The reaction is equimolar, so the mole fractions at
//! conversion `x` are
//!
//! ```text
//! CO: y_co(1-x)   H2O: y_h2o - x*y_co   CO2: y_co2 + x*y_co   H2: y_h2 + x*y_co
//! ```
//!
//! and `x_eq` solves `K = Q(x)` on `(0, x_max)`, `x_max = min(1, y_h2o/y_co)`.

use serde::{Deserialize, Serialize};

pub const KELVIN_OFFSET: f64 = 273.15;
pub const T_MIN_K: f64 = 300.0;
pub const T_MAX_K: f64 = 1500.0;

const K_A: f64 = 4577.8;
const K_B: f64 = 4.33;
const MAX_BISECTION_STEPS: usize = 4000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThermoError {
    #[error("temperature {0} K outside the correlation range [300, 1500] K")]
    OutOfRange(f64),
    #[error("invalid feed: {0}")]
    InvalidFeed(String),
    #[error("equilibrium bracket failure: {0}")]
    NonConvergence(String),
}

pub fn celsius_to_kelvin(t_c: f64) -> f64 {
    t_c + KELVIN_OFFSET
}

/// Inlet mole fractions. Fractions in `[0, 1]`, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedComposition {
    pub y_co: f64,
    pub y_h2o: f64,
    pub y_co2: f64,
    pub y_h2: f64,
    pub y_n2: f64,
}

impl FeedComposition {
    /// Builds a feed with nitrogen as the balance.
    pub fn with_n2_balance(y_co: f64, y_h2o: f64, y_co2: f64, y_h2: f64) -> Self {
        Self { y_co, y_h2o, y_co2, y_h2, y_n2: 1.0 - (y_co + y_h2o + y_co2 + y_h2) }
    }

    pub fn fractions(&self) -> [f64; 5] {
        [self.y_co, self.y_h2o, self.y_co2, self.y_h2, self.y_n2]
    }

    pub fn validate(&self) -> Result<(), ThermoError> {
        for (name, y) in ["CO", "H2O", "CO2", "H2", "N2"].into_iter().zip(self.fractions()) {
            if !(0.0..=1.0).contains(&y) {
                return Err(ThermoError::InvalidFeed(format!("{name} fraction {y} outside [0, 1]")));
            }
        }
        let sum: f64 = self.fractions().iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ThermoError::InvalidFeed(format!("fractions sum to {sum}")));
        }
        Ok(())
    }

    /// Outlet mole fractions after converting fraction `x` of the CO.
    pub fn products_at(&self, x: f64) -> [f64; 5] {
        let shift = x * self.y_co;
        [self.y_co - shift, self.y_h2o - shift, self.y_co2 + shift, self.y_h2 + shift, self.y_n2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumStatus {
    Solved,
    /// No water in the feed: nothing can convert.
    NoWater,
    /// Products already at or beyond equilibrium at zero conversion, so the
    /// forward reaction does not proceed.
    ProductLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub k_eq: f64,
    /// Conversion fraction in `[0, 1]`.
    pub x_eq: f64,
    /// `K - Q(x_eq)`; meaningful when `status == Solved`.
    pub residual: f64,
    pub status: EquilibriumStatus,
}

/// `K(T)` for T in kelvin.
pub fn equilibrium_constant(t_k: f64) -> Result<f64, ThermoError> {
    if !(T_MIN_K..=T_MAX_K).contains(&t_k) {
        return Err(ThermoError::OutOfRange(t_k));
    }
    Ok((K_A / t_k - K_B).exp())
}

/// Reaction quotient parameterised by the distance `u = x_max - x` to the
/// singular end of the bracket. Writing the denominators in `u` keeps full
/// relative precision as `x` approaches `x_max`.
struct Quotient {
    y_co: f64,
    y_co2: f64,
    y_h2: f64,
    x_max: f64,
    /// `1 - x_max`, exactly zero when water is in excess.
    co_gap: f64,
    /// `y_h2o - x_max*y_co`, exactly zero when CO is in excess.
    h2o_gap: f64,
}

impl Quotient {
    fn new(feed: &FeedComposition) -> Self {
        if feed.y_h2o >= feed.y_co {
            Self {
                y_co: feed.y_co,
                y_co2: feed.y_co2,
                y_h2: feed.y_h2,
                x_max: 1.0,
                co_gap: 0.0,
                h2o_gap: feed.y_h2o - feed.y_co,
            }
        } else {
            let x_max = feed.y_h2o / feed.y_co;
            Self { y_co: feed.y_co, y_co2: feed.y_co2, y_h2: feed.y_h2, x_max, co_gap: 1.0 - x_max, h2o_gap: 0.0 }
        }
    }

    fn at_gap(&self, u: f64) -> f64 {
        let x = self.x_max - u;
        let num = (self.y_co2 + x * self.y_co) * (self.y_h2 + x * self.y_co);
        let den = (self.y_co * (self.co_gap + u)) * (self.h2o_gap + u * self.y_co);
        num / den
    }
}

/// Equilibrium CO conversion for `feed` at `t_k` kelvin.
///
/// Bisects on the gap to `x_max` until the bracket cannot shrink further in
/// f64, which is far tighter than `|dx| <= 1e-12`.
pub fn equilibrium_conversion(feed: &FeedComposition, t_k: f64) -> Result<EquilibriumResult, ThermoError> {
    let k_eq = equilibrium_constant(t_k)?;
    feed.validate()?;
    if feed.y_co <= 0.0 {
        return Err(ThermoError::InvalidFeed("no CO in feed".into()));
    }
    if feed.y_h2o == 0.0 {
        return Ok(EquilibriumResult { k_eq, x_eq: 0.0, residual: k_eq, status: EquilibriumStatus::NoWater });
    }

    let q = Quotient::new(feed);
    let q0 = q.at_gap(q.x_max);
    if q0 >= k_eq {
        return Ok(EquilibriumResult { k_eq, x_eq: 0.0, residual: k_eq - q0, status: EquilibriumStatus::ProductLimited });
    }

    // f(u) = K - Q(u): negative near u=0 (Q -> inf), positive at u=x_max.
    let (mut lo, mut hi) = (0.0f64, q.x_max);
    let mut steps = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = k_eq - q.at_gap(mid);
        if f.is_nan() {
            return Err(ThermoError::NonConvergence(format!("quotient undefined at gap {mid}")));
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
        if steps > MAX_BISECTION_STEPS {
            return Err(ThermoError::NonConvergence("bisection step limit".into()));
        }
    }
    // pick the bracket end with the smaller residual
    let r_lo = if lo > 0.0 { k_eq - q.at_gap(lo) } else { f64::NEG_INFINITY };
    let r_hi = k_eq - q.at_gap(hi);
    let (u, residual) = if r_lo.abs() < r_hi.abs() { (lo, r_lo) } else { (hi, r_hi) };
    Ok(EquilibriumResult { k_eq, x_eq: (q.x_max - u).clamp(0.0, 1.0), residual, status: EquilibriumStatus::Solved })
}

/// Same as [`equilibrium_conversion`] with the temperature in °C.
pub fn equilibrium_conversion_celsius(feed: &FeedComposition, t_c: f64) -> Result<EquilibriumResult, ThermoError> {
    equilibrium_conversion(feed, celsius_to_kelvin(t_c))
}
