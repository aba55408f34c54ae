use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dpmech::{AlphaVariant, PrivacyParams};
use crate::netmodel::{build_canadian_feeder, Network};
use crate::optcore::SolverTolerances;
use crate::scenario::{validate_levels, CapacityMode, CapacityProcess, CaseStudy, PrivacyMode, UtilityCoeffs};

/// Which optimization problem a trial solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Decisions relaxed to `[0, 1]`.
    Continuous,
    /// All-or-nothing decisions via branch and bound.
    Binary,
}

impl Variant {
    /// Suffix appended to the case acronym in output files.
    pub fn suffix(self) -> &'static str {
        match self {
            Variant::Continuous => "_L",
            Variant::Binary => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantChoice {
    Continuous,
    Binary,
    Both,
}

impl VariantChoice {
    pub fn variants(self) -> &'static [Variant] {
        match self {
            VariantChoice::Continuous => &[Variant::Continuous],
            VariantChoice::Binary => &[Variant::Binary],
            VariantChoice::Both => &[Variant::Binary, Variant::Continuous],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Customer count varies, epsilon fixed per series.
    N,
    /// Epsilon varies at a single customer count.
    Epsilon,
}

/// Log-spaced grid including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..self.points)
            .map(|i| {
                if i == 0 {
                    self.min
                } else if i + 1 == self.points {
                    self.max
                } else {
                    (lo + (hi - lo) * i as f64 / (self.points - 1) as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Used for chart file names.
    pub name: String,
    pub kind: SweepKind,
    pub case: CaseStudy,
    #[serde(default = "default_variant")]
    pub variant: VariantChoice,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Explicit epsilon values. Ignored for variable-privacy cases.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Alternative to `epsilons`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_log_grid: Option<LogGrid>,
}

fn default_variant() -> VariantChoice {
    VariantChoice::Continuous
}

impl SweepConfig {
    /// Epsilon series; `None` is the variable-privacy series.
    pub fn epsilon_values(&self) -> Vec<Option<f64>> {
        if self.case.privacy_mode == PrivacyMode::Variable {
            return vec![None];
        }
        let mut eps = self.epsilons.clone();
        if let Some(g) = &self.epsilon_log_grid {
            eps.extend(g.values());
        }
        eps.into_iter().map(Some).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub section_length_km: f64,
    /// Voltage magnitude limits, pu. Squared internally.
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            section_length_km: 1.0,
            v_min_pu: 0.95,
            v_max_pu: 1.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Level set offered to variable-privacy customers.
    pub levels: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha_variant: AlphaVariant,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            levels: vec![0.01, 0.1, 1.0],
            weights: vec![1.0 / 3.0; 3],
            alpha_variant: AlphaVariant::Span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub mip_gap: f64,
    pub node_limit: usize,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let t = SolverTolerances::default();
        Self {
            feas_tol: t.feas_tol,
            gap_tol: t.gap_tol,
            mip_gap: t.mip_gap,
            node_limit: t.node_limit,
            max_iter: t.max_iter,
        }
    }
}

impl From<SolverConfig> for SolverTolerances {
    fn from(c: SolverConfig) -> Self {
        SolverTolerances {
            feas_tol: c.feas_tol,
            gap_tol: c.gap_tol,
            mip_gap: c.mip_gap,
            node_limit: c.node_limit,
            max_iter: c.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Fill the `wall_ms` column of records.csv. Wall times always go to
    /// timings.csv; inlining them makes records.csv run-dependent.
    pub inline_wall_ms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "sweep")]
    pub sweeps: Vec<SweepConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub capacity: CapacityProcess,
    #[serde(default)]
    pub utility: UtilityCoeffs,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_delta() -> f64 {
    0.5
}

impl Default for ExperimentConfig {
    /// Mixed quadratic customers, n from 500 to 1500, epsilon in {0.01, 1}.
    fn default() -> Self {
        Self {
            seed: 20_190_501,
            trials: 30,
            delta: default_delta(),
            sweeps: vec![SweepConfig {
                name: "qmf_n".into(),
                kind: SweepKind::N,
                case: "QMF".parse().expect("valid acronym"),
                variant: VariantChoice::Continuous,
                n_grid: (5..=15).map(|k| k * 100).collect(),
                epsilons: vec![0.01, 1.0],
                epsilon_log_grid: None,
            }],
            network: NetworkConfig::default(),
            capacity: CapacityProcess::default(),
            utility: UtilityCoeffs::default(),
            privacy: PrivacyConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn network(&self) -> Result<Network, HarnessError> {
        let cfg_err = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        let mut net = build_canadian_feeder(self.network.section_length_km, self.capacity.high_va.max(self.capacity.fixed_va))
            .map_err(|e| cfg_err(&e))?;
        net.v_min = self.network.v_min_pu.powi(2);
        net.v_max = self.network.v_max_pu.powi(2);
        net.ensure_valid().map_err(|e| cfg_err(&e))?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if let Err(e) = PrivacyParams::new(1.0, self.delta) {
            return err(e.to_string());
        }
        if self.sweeps.is_empty() {
            return err("at least one [[sweep]] is required".into());
        }
        self.network()?;
        self.capacity.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.capacity.mode == CapacityMode::Bernoulli && self.trials > self.capacity.num_steps() {
            return err(format!(
                "bernoulli capacity maps trials to time steps: {} trials exceed {} steps",
                self.trials,
                self.capacity.num_steps()
            ));
        }
        self.utility.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let s = &self.solver;
        if !(s.feas_tol > 0.0 && s.gap_tol > 0.0 && s.mip_gap >= 0.0) || s.node_limit == 0 || s.max_iter == 0 {
            return err("solver tolerances must be positive".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for sweep in &self.sweeps {
            if !names.insert(sweep.name.as_str()) {
                return err(format!("duplicate sweep name {:?}", sweep.name));
            }
            if sweep.name.is_empty() || !sweep.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return err(format!("sweep name {:?} must be non-empty [A-Za-z0-9_-]", sweep.name));
            }
            if sweep.n_grid.is_empty() || sweep.n_grid.contains(&0) {
                return err(format!("sweep {}: n_grid must be non-empty and positive", sweep.name));
            }
            if sweep.kind == SweepKind::Epsilon && sweep.n_grid.len() != 1 {
                return err(format!("sweep {}: epsilon sweeps take exactly one n", sweep.name));
            }
            if let Some(g) = &sweep.epsilon_log_grid {
                if !(g.min > 0.0 && g.max >= g.min && g.max.is_finite()) || g.points == 0 {
                    return err(format!("sweep {}: invalid epsilon_log_grid", sweep.name));
                }
            }
            match sweep.case.privacy_mode {
                PrivacyMode::Fixed => {
                    let eps = sweep.epsilon_values();
                    if eps.is_empty() {
                        return err(format!("sweep {}: empty epsilon grid", sweep.name));
                    }
                    if let Some(bad) = eps.iter().flatten().find(|e| !(**e > 0.0) || !e.is_finite()) {
                        return err(format!("sweep {}: epsilon {bad} must be positive", sweep.name));
                    }
                }
                PrivacyMode::Variable => {
                    if sweep.kind == SweepKind::Epsilon {
                        return err(format!("sweep {}: variable privacy has no epsilon axis", sweep.name));
                    }
                    validate_levels(&self.privacy.levels, &self.privacy.weights)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 1
            trials = 2
            [[sweep]]
            name = "s"
            kind = "n"
            case = "QRF"
            n_grid = [10]
            epsilons = [1.0]
            "#,
        )
        .unwrap();
        assert_eq!(c.delta, 0.5);
        assert_eq!(c.sweeps[0].variant, VariantChoice::Continuous);
        assert_eq!(c.capacity.fixed_va, 4e6);
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = ExperimentConfig::default();
        let mut c = base.clone();
        c.sweeps[0].epsilons.clear();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.sweeps[0].n_grid.clear();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.delta = 1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.sweeps[0].kind = SweepKind::Epsilon;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.capacity = CapacityProcess::bernoulli(1e6, 4e6, 0.5, 1000.0, 100.0);
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\ntrials = 1\nsweep = []\nbogus = 2").is_err());
    }

    #[test]
    fn log_grid_hits_endpoints() {
        let g = LogGrid {
            min: 5e-5,
            max: 1.0,
            points: 10,
        }
        .values();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 5e-5);
        assert_eq!(g[9], 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
