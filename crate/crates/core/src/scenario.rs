//! Customer populations, utilities, privacy levels and capacity processes
//! for the case-study matrix.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::customer::Customer;
use crate::rng::{stream_rng, Stream};

pub const RESIDENTIAL_VA: (f64, f64) = (1500.0, 15_000.0);
pub const COMMERCIAL_VA: (f64, f64) = (3e5, 1e6);
/// Largest phase angle, 36 degrees.
pub const MAX_PHASE_ANGLE: f64 = 36.0 * std::f64::consts::PI / 180.0;
/// Share of customers that may be commercial in a mixed population.
pub const COMMERCIAL_SHARE: f64 = 0.10;
pub const LOAD_BUSES: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown case study {0:?}; expected three letters from [QU][RM][FV]")]
    Acronym(String),
    #[error("need at least one customer")]
    Empty,
    #[error("quadratic coefficients need a > 0, b >= 0, c >= 0; got ({a}, {b}, {c})")]
    Coefficients { a: f64, b: f64, c: f64 },
    #[error("fixed epsilon must be positive, got {0}")]
    FixedEpsilon(f64),
    #[error("privacy level set must be non-empty with positive levels")]
    Levels,
    #[error("privacy weights must match the levels, be non-negative and sum to 1")]
    Weights,
    #[error("invalid capacity process: {0}")]
    Capacity(String),
    #[error("time {t} outside [0, {horizon}]")]
    Time { t: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UtilityModel {
    /// Quadratic in the apparent demand.
    Quadratic,
    /// Uniform draw below the customer kind's demand ceiling.
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CustomerMix {
    Residential,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrivacyMode {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaseStudy {
    pub utility_model: UtilityModel,
    pub customer_mix: CustomerMix,
    pub privacy_mode: PrivacyMode,
}

impl CaseStudy {
    pub fn acronym(&self) -> String {
        let u = match self.utility_model {
            UtilityModel::Quadratic => 'Q',
            UtilityModel::Uncorrelated => 'U',
        };
        let m = match self.customer_mix {
            CustomerMix::Residential => 'R',
            CustomerMix::Mixed => 'M',
        };
        let p = match self.privacy_mode {
            PrivacyMode::Fixed => 'F',
            PrivacyMode::Variable => 'V',
        };
        [u, m, p].iter().collect()
    }
}

impl fmt::Display for CaseStudy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.acronym())
    }
}

impl FromStr for CaseStudy {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScenarioError::Acronym(s.to_string());
        let b = s.as_bytes();
        if b.len() != 3 {
            return Err(err());
        }
        let utility_model = match b[0].to_ascii_uppercase() {
            b'Q' => UtilityModel::Quadratic,
            b'U' => UtilityModel::Uncorrelated,
            _ => return Err(err()),
        };
        let customer_mix = match b[1].to_ascii_uppercase() {
            b'R' => CustomerMix::Residential,
            b'M' => CustomerMix::Mixed,
            _ => return Err(err()),
        };
        let privacy_mode = match b[2].to_ascii_uppercase() {
            b'F' => PrivacyMode::Fixed,
            b'V' => PrivacyMode::Variable,
            _ => return Err(err()),
        };
        Ok(Self {
            utility_model,
            customer_mix,
            privacy_mode,
        })
    }
}

impl Serialize for CaseStudy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.acronym())
    }
}

impl<'de> Deserialize<'de> for CaseStudy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerKind {
    Residential,
    Commercial,
}

impl CustomerKind {
    /// Apparent demand range, VA.
    pub fn range_va(self) -> (f64, f64) {
        match self {
            CustomerKind::Residential => RESIDENTIAL_VA,
            CustomerKind::Commercial => COMMERCIAL_VA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    pub kind: CustomerKind,
    /// `|S_k|`, VA.
    pub apparent_magnitude: f64,
    /// Radians in `[0, MAX_PHASE_ANGLE]`.
    pub phase_angle: f64,
    pub bus: usize,
    pub utility: f64,
    pub privacy_epsilon: f64,
}

impl CustomerProfile {
    pub fn demand_va(&self) -> Complex64 {
        Complex64::from_polar(self.apparent_magnitude, self.phase_angle)
    }

    pub fn power_factor(&self) -> f64 {
        self.phase_angle.cos()
    }

    /// Optimizer view in per-unit of `s_base`.
    pub fn to_customer(&self, id: usize, s_base: f64) -> Customer {
        Customer::inelastic(id, self.bus, self.demand_va() / s_base, self.utility)
    }
}

/// Demands, phase angles and buses. Utilities and privacy levels are left at
/// zero for [`assign_utilities`] and [`assign_privacy`].
pub fn generate_customers<R: Rng + ?Sized>(
    case: CaseStudy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<CustomerProfile>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::Empty);
    }
    let mut kinds = vec![CustomerKind::Residential; n];
    if case.customer_mix == CustomerMix::Mixed {
        let max_commercial = (COMMERCIAL_SHARE * n as f64).floor() as usize;
        if max_commercial >= 1 {
            let count = rng.random_range(1..=max_commercial);
            for k in sample(rng, n, count) {
                kinds[k] = CustomerKind::Commercial;
            }
        }
    }
    Ok(kinds
        .into_iter()
        .map(|kind| {
            let (lo, hi) = kind.range_va();
            CustomerProfile {
                kind,
                apparent_magnitude: rng.random_range(lo..=hi),
                phase_angle: rng.random_range(0.0..=MAX_PHASE_ANGLE),
                bus: LOAD_BUSES[rng.random_range(0..LOAD_BUSES.len())],
                utility: 0.0,
                privacy_epsilon: 0.0,
            }
        })
        .collect())
}

/// `u = a s^2 + b s + c` on per-unit apparent demand `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for QuadraticCoeffs {
    fn default() -> Self {
        Self { a: 1.0, b: 0.05, c: 0.0 }
    }
}

impl QuadraticCoeffs {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok = self.a > 0.0 && self.b >= 0.0 && self.c >= 0.0 && self.a.is_finite() && self.b.is_finite() && self.c.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ScenarioError::Coefficients {
                a: self.a,
                b: self.b,
                c: self.c,
            })
        }
    }

    pub fn eval(&self, s_pu: f64) -> f64 {
        (self.a * s_pu + self.b) * s_pu + self.c
    }
}

/// Quadratic coefficients per customer kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityCoeffs {
    #[serde(flatten)]
    pub residential: QuadraticCoeffs,
    /// Override for commercial customers; residential values when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commercial: Option<QuadraticCoeffs>,
}

impl Default for UtilityCoeffs {
    fn default() -> Self {
        Self {
            residential: QuadraticCoeffs::default(),
            commercial: None,
        }
    }
}

impl UtilityCoeffs {
    pub fn for_kind(&self, kind: CustomerKind) -> QuadraticCoeffs {
        match kind {
            CustomerKind::Residential => self.residential,
            CustomerKind::Commercial => self.commercial.unwrap_or(self.residential),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.residential.validate()?;
        if let Some(c) = &self.commercial {
            c.validate()?;
        }
        Ok(())
    }
}

/// Per-customer utilities; quadratic ones are deterministic in the demand.
pub fn assign_utilities<R: Rng + ?Sized>(
    case: CaseStudy,
    customers: &[CustomerProfile],
    coeffs: &UtilityCoeffs,
    s_base: f64,
    rng: &mut R,
) -> Result<Vec<f64>, ScenarioError> {
    coeffs.validate()?;
    Ok(customers
        .iter()
        .map(|c| match case.utility_model {
            UtilityModel::Quadratic => coeffs.for_kind(c.kind).eval(c.apparent_magnitude / s_base),
            UtilityModel::Uncorrelated => rng.random_range(0.0..=c.kind.range_va().1 / s_base),
        })
        .collect())
}

fn kinds_in(mix: CustomerMix) -> &'static [CustomerKind] {
    match mix {
        CustomerMix::Residential => &[CustomerKind::Residential],
        CustomerMix::Mixed => &[CustomerKind::Residential, CustomerKind::Commercial],
    }
}

/// Bounds `[u_min, u_max]` known to the operator before any draw.
pub fn utility_bounds(case: CaseStudy, coeffs: &UtilityCoeffs, s_base: f64) -> (f64, f64) {
    let kinds = kinds_in(case.customer_mix);
    match case.utility_model {
        UtilityModel::Quadratic => kinds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| {
            let q = coeffs.for_kind(k);
            let (s_lo, s_hi) = k.range_va();
            (lo.min(q.eval(s_lo / s_base)), hi.max(q.eval(s_hi / s_base)))
        }),
        UtilityModel::Uncorrelated => {
            let ceiling = kinds.iter().map(|k| k.range_va().1).fold(0.0, f64::max);
            (0.0, ceiling / s_base)
        }
    }
}

/// Privacy level per customer: constant in fixed mode, categorical draws
/// from `levels` in variable mode.
pub fn assign_privacy<R: Rng + ?Sized>(
    case: CaseStudy,
    n: usize,
    fixed_eps: f64,
    levels: &[f64],
    weights: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>, ScenarioError> {
    match case.privacy_mode {
        PrivacyMode::Fixed => {
            if !(fixed_eps > 0.0) || !fixed_eps.is_finite() {
                return Err(ScenarioError::FixedEpsilon(fixed_eps));
            }
            Ok(vec![fixed_eps; n])
        }
        PrivacyMode::Variable => {
            validate_levels(levels, weights)?;
            let dist = WeightedIndex::new(weights).map_err(|_| ScenarioError::Weights)?;
            Ok((0..n).map(|_| levels[dist.sample(rng)]).collect())
        }
    }
}

pub fn validate_levels(levels: &[f64], weights: &[f64]) -> Result<(), ScenarioError> {
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(ScenarioError::Levels);
    }
    let sum: f64 = weights.iter().sum();
    if weights.len() != levels.len() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(ScenarioError::Weights);
    }
    Ok(())
}

/// Everything needed to draw one population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec<'a> {
    pub case: CaseStudy,
    pub n: usize,
    pub coeffs: &'a UtilityCoeffs,
    pub s_base: f64,
    pub fixed_eps: f64,
    pub levels: &'a [f64],
    pub weights: &'a [f64],
}

/// Complete population for one trial, each component drawn from its own
/// stream of `seed`.
pub fn build_population(spec: &PopulationSpec<'_>, seed: u64) -> Result<Vec<CustomerProfile>, ScenarioError> {
    let mut customers = generate_customers(spec.case, spec.n, &mut stream_rng(seed, Stream::Population))?;
    let utilities = assign_utilities(
        spec.case,
        &customers,
        spec.coeffs,
        spec.s_base,
        &mut stream_rng(seed, Stream::Utility),
    )?;
    let eps = assign_privacy(
        spec.case,
        spec.n,
        spec.fixed_eps,
        spec.levels,
        spec.weights,
        &mut stream_rng(seed, Stream::Privacy),
    )?;
    for ((c, u), e) in customers.iter_mut().zip(utilities).zip(eps) {
        c.utility = u;
        c.privacy_epsilon = e;
    }
    Ok(customers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    Fixed,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityProcess {
    pub mode: CapacityMode,
    #[serde(default = "default_fixed_va")]
    pub fixed_va: f64,
    #[serde(default = "default_low_va")]
    pub low_va: f64,
    #[serde(default = "default_fixed_va")]
    pub high_va: f64,
    /// Probability of the high state at each step.
    #[serde(default = "default_switch_prob")]
    pub switch_prob: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
}

fn default_fixed_va() -> f64 {
    4e6
}
fn default_low_va() -> f64 {
    1e6
}
fn default_switch_prob() -> f64 {
    0.5
}
fn default_horizon() -> f64 {
    10_000.0
}
fn default_step() -> f64 {
    100.0
}

impl Default for CapacityProcess {
    fn default() -> Self {
        Self::fixed(default_fixed_va())
    }
}

impl CapacityProcess {
    pub fn fixed(va: f64) -> Self {
        Self {
            mode: CapacityMode::Fixed,
            fixed_va: va,
            low_va: default_low_va(),
            high_va: default_fixed_va(),
            switch_prob: default_switch_prob(),
            horizon_s: default_horizon(),
            step_s: default_step(),
        }
    }

    pub fn bernoulli(low_va: f64, high_va: f64, switch_prob: f64, horizon_s: f64, step_s: f64) -> Self {
        Self {
            mode: CapacityMode::Bernoulli,
            fixed_va: high_va,
            low_va,
            high_va,
            switch_prob,
            horizon_s,
            step_s,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Capacity(m.to_string()));
        match self.mode {
            CapacityMode::Fixed => {
                if !(self.fixed_va > 0.0) || !self.fixed_va.is_finite() {
                    return bad("fixed_va must be positive");
                }
            }
            CapacityMode::Bernoulli => {
                if !(self.low_va > 0.0 && self.low_va < self.high_va && self.high_va.is_finite()) {
                    return bad("need 0 < low_va < high_va");
                }
                if !(0.0..=1.0).contains(&self.switch_prob) {
                    return bad("switch_prob must lie in [0, 1]");
                }
                if !(self.step_s > 0.0 && self.horizon_s >= self.step_s) {
                    return bad("need 0 < step_s <= horizon_s");
                }
                let steps = self.horizon_s / self.step_s;
                if (steps - steps.round()).abs() > 1e-9 {
                    return bad("horizon_s must be a multiple of step_s");
                }
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        match self.mode {
            CapacityMode::Fixed => 1,
            CapacityMode::Bernoulli => (self.horizon_s / self.step_s).round() as usize,
        }
    }

    /// Start time of every step.
    pub fn step_times(&self) -> Vec<f64> {
        (0..self.num_steps()).map(|k| k as f64 * self.step_s).collect()
    }

    /// Capacity of each step, drawn from the capacity stream of `seed`.
    pub fn path(&self, seed: u64) -> Vec<f64> {
        match self.mode {
            CapacityMode::Fixed => vec![self.fixed_va],
            CapacityMode::Bernoulli => {
                let mut rng = stream_rng(seed, Stream::Capacity);
                (0..self.num_steps())
                    .map(|_| {
                        if rng.random_bool(self.switch_prob) {
                            self.high_va
                        } else {
                            self.low_va
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Capacity in VA at time `t_s`. The final instant belongs to the last step.
pub fn capacity_at(process: &CapacityProcess, t_s: f64, seed: u64) -> Result<f64, ScenarioError> {
    process.validate()?;
    if process.mode == CapacityMode::Fixed {
        return Ok(process.fixed_va);
    }
    if !(t_s >= 0.0 && t_s <= process.horizon_s) {
        return Err(ScenarioError::Time {
            t: t_s,
            horizon: process.horizon_s,
        });
    }
    let idx = ((t_s / process.step_s).floor() as usize).min(process.num_steps() - 1);
    Ok(process.path(seed)[idx])
}
