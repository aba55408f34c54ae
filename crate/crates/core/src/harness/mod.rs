//! Trial orchestration: population draw, true and private solves, privacy
//! cost, sweeps over customer count and epsilon.

mod config;
mod output;
mod summary;

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use thiserror::Error;

pub use config::{
    ExperimentConfig, LogGrid, NetworkConfig, OutputConfig, PrivacyConfig, SolverConfig, SweepConfig, SweepKind,
    Variant, VariantChoice,
};
pub use output::{emit_outputs, read_records, render_chart, write_records, write_summary};
pub use summary::{summarize, GroupKey, SummaryRow};

use crate::dpmech::{perturb_utilities, privacy_cost, theoretical_alpha, PrivacyParams};
use crate::netmodel::Network;
use crate::optcore::{evaluate_objective, solve_binary, solve_continuous, DrInstance, Solution, SolveStatus, SolverTolerances};
use crate::rng::trial_seed;
use crate::scenario::{build_population, utility_bounds, CapacityMode, CaseStudy, PopulationSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed record on line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("no records to write")]
    NoRecords,
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Outcome of one solve as written to the status columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Solved(SolveStatus),
    Error,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Solved(s) => s.as_str(),
            TrialStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => TrialStatus::Solved(SolveStatus::Optimal),
            "infeasible" => TrialStatus::Solved(SolveStatus::Infeasible),
            "tolerance_limit" => TrialStatus::Solved(SolveStatus::ToleranceLimit),
            "error" => TrialStatus::Error,
            _ => return None,
        })
    }

    pub fn is_optimal(&self) -> bool {
        *self == TrialStatus::Solved(SolveStatus::Optimal)
    }
}

/// One trial. `epsilon` is `None` for variable privacy levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub case: String,
    pub n: usize,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub trial: usize,
    pub seed: u64,
    pub opt: Option<f64>,
    pub opt_dp: Option<f64>,
    pub phi: Option<f64>,
    pub alpha: f64,
    pub exact_gap: Option<f64>,
    pub status_true: TrialStatus,
    pub status_dp: TrialStatus,
    /// Both solves together.
    pub wall_ms: f64,
    pub diagnostics: TrialDiagnostics,
}

/// Per-solve details kept out of records.csv.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialDiagnostics {
    pub capacity_va: f64,
    pub wall_true_ms: f64,
    pub wall_dp_ms: f64,
    pub nodes_true: usize,
    pub nodes_dp: usize,
}

impl ExperimentRecord {
    /// A solver failure: either solve ended without a certified optimum.
    pub fn failed(&self) -> bool {
        !(self.status_true.is_optimal() && self.status_dp.is_optimal())
    }

    /// Opt - Opt^DP when both are known.
    pub fn loss(&self) -> Option<f64> {
        Some(self.opt? - self.opt_dp?)
    }

    pub fn bound_holds(&self) -> Option<bool> {
        self.loss().map(|l| l <= self.alpha)
    }

    pub fn sort_key(&self) -> (String, usize, u64, usize) {
        // Variable privacy sorts after every numeric epsilon.
        let eps = self.epsilon.map_or(u64::MAX, f64::to_bits);
        (self.case.clone(), self.n, eps, self.trial)
    }
}

/// Everything shared by all trials of a run.
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub network: Network,
    pub config: ExperimentConfig,
    pub tolerances: SolverTolerances,
}

impl TrialContext {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        Ok(Self {
            network: config.network()?,
            config: config.clone(),
            tolerances: config.solver.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub case: CaseStudy,
    pub variant: Variant,
    pub n: usize,
    pub epsilon: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub capacity_va: f64,
}

impl TrialSpec {
    pub fn label(&self) -> String {
        format!("{}{}", self.case.acronym(), self.variant.suffix())
    }
}

fn solve(
    variant: Variant,
    instance: &DrInstance,
    utilities: &[f64],
    tol: &SolverTolerances,
) -> (Option<Solution>, TrialStatus, f64) {
    let start = Instant::now();
    let result = match variant {
        Variant::Continuous => solve_continuous(instance, utilities, tol),
        Variant::Binary => solve_binary(instance, utilities, tol),
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(sol) => {
            let status = TrialStatus::Solved(sol.status);
            let usable = sol.status != SolveStatus::Infeasible;
            (usable.then_some(sol), status, ms)
        }
        Err(e) => {
            debug!("solve failed: {e}");
            (None, TrialStatus::Error, ms)
        }
    }
}

/// Runs one trial: draws the population, solves with true and perturbed
/// utilities and scores the private decisions with the true utilities.
pub fn run_trial(ctx: &TrialContext, spec: &TrialSpec) -> Result<ExperimentRecord, HarnessError> {
    let cfg = &ctx.config;
    let cfg_err = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
    let s_base = ctx.network.s_base;
    let population = build_population(
        &PopulationSpec {
            case: spec.case,
            n: spec.n,
            coeffs: &cfg.utility,
            s_base,
            fixed_eps: spec.epsilon.unwrap_or(1.0),
            levels: &cfg.privacy.levels,
            weights: &cfg.privacy.weights,
        },
        spec.seed,
    )
    .map_err(|e| cfg_err(&e))?;
    let (u_min, u_max) = utility_bounds(spec.case, &cfg.utility, s_base);
    let customers = population.iter().enumerate().map(|(k, p)| p.to_customer(k, s_base)).collect();
    let instance =
        DrInstance::new(&ctx.network, customers, spec.capacity_va / s_base, u_min, u_max).map_err(|e| cfg_err(&e))?;
    let truth = instance.true_utilities();

    let params: Vec<PrivacyParams> = population
        .iter()
        .map(|p| PrivacyParams::new(p.privacy_epsilon, cfg.delta))
        .collect::<Result<_, _>>()
        .map_err(|e| cfg_err(&e))?;
    let eps_min = params.iter().map(|p| p.epsilon).fold(f64::INFINITY, f64::min);
    let alpha = theoretical_alpha(
        spec.n,
        &PrivacyParams::new(eps_min, cfg.delta).map_err(|e| cfg_err(&e))?,
        u_min,
        u_max,
        cfg.privacy.alpha_variant,
    )
    .map_err(|e| cfg_err(&e))?;
    let noisy = perturb_utilities(&truth, &params, u_min, u_max, spec.seed).map_err(|e| cfg_err(&e))?;

    let (sol_true, status_true, wall_true_ms) = solve(spec.variant, &instance, &truth, &ctx.tolerances);
    let (sol_dp, status_dp, wall_dp_ms) = solve(spec.variant, &instance, &noisy.values, &ctx.tolerances);

    let opt = sol_true.as_ref().map(|s| s.objective);
    let opt_dp = sol_dp.as_ref().map(|s| evaluate_objective(&s.x, &truth));
    let phi = match (opt, opt_dp) {
        (Some(o), Some(d)) => privacy_cost(o, d).ok(),
        _ => None,
    };
    let exact_gap = [&sol_true, &sol_dp]
        .iter()
        .filter_map(|s| s.as_ref().map(|s| s.exactness))
        .reduce(f64::max);

    Ok(ExperimentRecord {
        case: spec.label(),
        n: spec.n,
        epsilon: spec.epsilon,
        delta: cfg.delta,
        trial: spec.trial,
        seed: spec.seed,
        opt,
        opt_dp,
        phi,
        alpha,
        exact_gap,
        status_true,
        status_dp,
        wall_ms: wall_true_ms + wall_dp_ms,
        diagnostics: TrialDiagnostics {
            capacity_va: spec.capacity_va,
            wall_true_ms,
            wall_dp_ms,
            nodes_true: sol_true.as_ref().map_or(0, |s| s.nodes),
            nodes_dp: sol_dp.as_ref().map_or(0, |s| s.nodes),
        },
    })
}

/// Records of one configured sweep, sorted by key.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub records: Vec<ExperimentRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub sweeps: Vec<SweepResult>,
}

impl RunOutput {
    /// All records sorted by key.
    pub fn records(&self) -> Vec<ExperimentRecord> {
        let mut all: Vec<ExperimentRecord> = self.sweeps.iter().flat_map(|s| s.records.iter().cloned()).collect();
        all.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        all
    }

    pub fn failure_fraction(&self) -> f64 {
        let all: Vec<&ExperimentRecord> = self.sweeps.iter().flat_map(|s| &s.records).collect();
        if all.is_empty() {
            return 0.0;
        }
        all.iter().filter(|r| r.failed()).count() as f64 / all.len() as f64
    }
}

/// Trials of one sweep in key order. Trial `i` uses seed
/// `trial_seed(base_seed, i)` at every grid point, so grid points share
/// populations and noise draws trial by trial.
pub fn sweep_specs(config: &ExperimentConfig, sweep: &SweepConfig) -> Vec<TrialSpec> {
    let capacities: Vec<f64> = match config.capacity.mode {
        CapacityMode::Fixed => vec![config.capacity.fixed_va; config.trials],
        // Trial i observes the capacity at time i * step of one shared path.
        CapacityMode::Bernoulli => config.capacity.path(config.seed)[..config.trials].to_vec(),
    };
    let mut specs = Vec::new();
    for &variant in sweep.variant.variants() {
        for &n in &sweep.n_grid {
            for epsilon in sweep.epsilon_values() {
                for (trial, &capacity_va) in capacities.iter().enumerate() {
                    specs.push(TrialSpec {
                        case: sweep.case,
                        variant,
                        n,
                        epsilon,
                        trial,
                        seed: trial_seed(config.seed, trial as u64),
                        capacity_va,
                    });
                }
            }
        }
    }
    specs
}

fn run_specs(ctx: &TrialContext, specs: &[TrialSpec]) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut records = specs
        .par_iter()
        .map(|s| run_trial(ctx, s))
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(records)
}

/// Runs one sweep on the current rayon pool.
pub fn run_sweep(ctx: &TrialContext, sweep: &SweepConfig) -> Result<SweepResult, HarnessError> {
    let specs = sweep_specs(&ctx.config, sweep);
    info!("sweep {}: {} trials", sweep.name, specs.len());
    Ok(SweepResult {
        config: sweep.clone(),
        records: run_specs(ctx, &specs)?,
    })
}

/// Full factorial over `n_grid x epsilons x trials`.
pub fn run_sweep_n(
    config: &ExperimentConfig,
    case: CaseStudy,
    variant: VariantChoice,
    n_grid: &[usize],
    epsilons: &[f64],
) -> Result<SweepResult, HarnessError> {
    let sweep = SweepConfig {
        name: format!("{}_n", case.acronym().to_lowercase()),
        kind: SweepKind::N,
        case,
        variant,
        n_grid: n_grid.to_vec(),
        epsilons: epsilons.to_vec(),
        epsilon_log_grid: None,
    };
    single_sweep(config, sweep)
}

/// Both problem variants at one customer count for every epsilon.
pub fn run_sweep_epsilon(
    config: &ExperimentConfig,
    case: CaseStudy,
    n: usize,
    epsilons: &[f64],
) -> Result<SweepResult, HarnessError> {
    let sweep = SweepConfig {
        name: format!("{}_epsilon", case.acronym().to_lowercase()),
        kind: SweepKind::Epsilon,
        case,
        variant: VariantChoice::Both,
        n_grid: vec![n],
        epsilons: epsilons.to_vec(),
        epsilon_log_grid: None,
    };
    single_sweep(config, sweep)
}

fn single_sweep(config: &ExperimentConfig, sweep: SweepConfig) -> Result<SweepResult, HarnessError> {
    let mut cfg = config.clone();
    cfg.sweeps = vec![sweep.clone()];
    let ctx = TrialContext::new(&cfg)?;
    run_sweep(&ctx, &sweep)
}

/// Runs every sweep of `config` on `threads` workers (0 picks the default).
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<RunOutput, HarnessError> {
    let ctx = TrialContext::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| {
        let sweeps = config
            .sweeps
            .iter()
            .map(|s| run_sweep(&ctx, s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunOutput { sweeps })
    })
}

/// Fraction of records with `Opt - Opt^DP <= alpha` among those where both
/// are known.
pub fn bound_fraction(records: &[ExperimentRecord]) -> Option<f64> {
    let checks: Vec<bool> = records.iter().filter_map(ExperimentRecord::bound_holds).collect();
    (!checks.is_empty()).then(|| checks.iter().filter(|b| **b).count() as f64 / checks.len() as f64)
}
