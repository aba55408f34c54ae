//! Utility-maximizing demand response over the relaxed branch flow model.
//!
//! The continuous problem is handed to the built-in conic solver; the binary
//! problem is solved by best-first branch and bound on top of it.

mod bnb;
mod heuristic;
mod oracle;

use thiserror::Error;

use crate::conic::{self, BoundRow, BoundSide, ConicProblem, ConicSettings, ConicStatus, SocBlock};
use crate::customer::Customer;
use crate::netmodel::{Network, NetworkError};
use crate::powerflow::{
    assemble_constraints_fixed, max_exactness_gap, ConstraintSystem, FlowState, PowerFlowError,
    VoltageTerm,
};

pub use bnb::solve_binary;
pub use oracle::{brute_force_oracle, ORACLE_MAX_CUSTOMERS};

#[derive(Debug, Error, PartialEq)]
pub enum OptError {
    #[error("utility of customer {customer} ({value}) outside [{u_min}, {u_max}]")]
    UtilityOutOfRange {
        customer: usize,
        value: f64,
        u_min: f64,
        u_max: f64,
    },
    #[error("customer {0} has a negative demand component")]
    NegativeDemand(usize),
    #[error("invalid utility bounds [{0}, {1}]")]
    Bounds(f64, f64),
    #[error("capacity must be finite and non-negative, got {0}")]
    Capacity(f64),
    #[error("expected {expected} utilities, got {got}")]
    UtilityLength { expected: usize, got: usize },
    #[error("non-finite objective utility for customer {0}")]
    NonFiniteUtility(usize),
    #[error("brute-force oracle limited to {max} inelastic customers, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("brute-force oracle needs inelastic customers only")]
    OracleElastic,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Conic(#[from] conic::ConicError),
}

/// Complete input of one demand-response decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DrInstance {
    /// Network with `attached_customers` consistent with `customers`.
    pub network: Network,
    pub customers: Vec<Customer>,
    pub capacity_pu: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl DrInstance {
    /// Validates the data and attaches every customer to its bus.
    pub fn new(
        network: &Network,
        customers: Vec<Customer>,
        capacity_pu: f64,
        u_min: f64,
        u_max: f64,
    ) -> Result<Self, OptError> {
        if !(u_min <= u_max) || !u_min.is_finite() || !u_max.is_finite() {
            return Err(OptError::Bounds(u_min, u_max));
        }
        if !(capacity_pu >= 0.0) || !capacity_pu.is_finite() {
            return Err(OptError::Capacity(capacity_pu));
        }
        for (k, c) in customers.iter().enumerate() {
            if !(c.utility >= u_min && c.utility <= u_max) {
                return Err(OptError::UtilityOutOfRange {
                    customer: k,
                    value: c.utility,
                    u_min,
                    u_max,
                });
            }
            if !(c.demand.re >= 0.0 && c.demand.im >= 0.0) {
                return Err(OptError::NegativeDemand(k));
            }
        }
        let buses: Vec<usize> = customers.iter().map(|c| c.bus).collect();
        let network = network.with_customers(&buses)?;
        network.ensure_valid()?;
        Ok(Self {
            network,
            customers,
            capacity_pu,
            u_min,
            u_max,
        })
    }

    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn true_utilities(&self) -> Vec<f64> {
        self.customers.iter().map(|c| c.utility).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub mip_gap: f64,
    pub node_limit: usize,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            mip_gap: 1e-6,
            node_limit: 1_000_000,
            max_iter: 100,
        }
    }
}

impl SolverTolerances {
    fn conic_settings(&self) -> ConicSettings {
        ConicSettings {
            feas_tol: self.feas_tol,
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
            ..ConicSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    ToleranceLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::ToleranceLimit => "tolerance_limit",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// `sum u_k x_k` under the utilities the solve was asked to maximize.
    pub objective: f64,
    pub flow: FlowState,
    pub status: SolveStatus,
    /// Relative gap between bound and incumbent; zero for continuous solves.
    pub mip_gap: f64,
    /// Largest slack in the relaxed current definition.
    pub exactness: f64,
    /// `u_k - price of serving k` per customer at a continuous optimum;
    /// zero for fixed decisions.
    pub reduced_costs: Vec<f64>,
    /// Branch-and-bound nodes explored; zero for continuous solves.
    pub nodes: usize,
}

impl Solution {
    pub(crate) fn infeasible(instance: &DrInstance, status: SolveStatus) -> Self {
        let n = instance.num_customers();
        Self {
            x: vec![0.0; n],
            objective: 0.0,
            flow: FlowState::flat(&instance.network),
            status,
            mip_gap: f64::INFINITY,
            exactness: 0.0,
            reduced_costs: vec![0.0; n],
            nodes: 0,
        }
    }
}

/// `sum_k u_k x_k`.
pub fn evaluate_objective(x: &[f64], utilities: &[f64]) -> f64 {
    assert_eq!(x.len(), utilities.len(), "decision and utility lengths differ");
    x.iter().zip(utilities).map(|(a, b)| a * b).sum()
}

fn check_utilities(instance: &DrInstance, utilities: &[f64]) -> Result<(), OptError> {
    if utilities.len() != instance.num_customers() {
        return Err(OptError::UtilityLength {
            expected: instance.num_customers(),
            got: utilities.len(),
        });
    }
    if let Some(k) = utilities.iter().position(|u| !u.is_finite()) {
        return Err(OptError::NonFiniteUtility(k));
    }
    Ok(())
}

/// Maximizes `sum u_k x_k` over `x in [0,1]^n` and the relaxed network.
pub fn solve_continuous(
    instance: &DrInstance,
    utilities: &[f64],
    tol: &SolverTolerances,
) -> Result<Solution, OptError> {
    solve_continuous_fixed(instance, utilities, tol, &vec![None; instance.num_customers()])
}

/// Continuous solve with some decisions pinned to constants.
pub fn solve_continuous_fixed(
    instance: &DrInstance,
    utilities: &[f64],
    tol: &SolverTolerances,
    fixed: &[Option<f64>],
) -> Result<Solution, OptError> {
    solve_relaxation(instance, utilities, tol, fixed, true)
}

/// With `polish`, the network state is recomputed for the optimal decisions
/// by minimizing resistive losses, which makes the relaxed current definition
/// tight when capacity is slack and currents are otherwise free.
pub(crate) fn solve_relaxation(
    instance: &DrInstance,
    utilities: &[f64],
    tol: &SolverTolerances,
    fixed: &[Option<f64>],
    polish: bool,
) -> Result<Solution, OptError> {
    check_utilities(instance, utilities)?;
    let system = assemble_constraints_fixed(
        &instance.network,
        &instance.customers,
        instance.capacity_pu,
        fixed,
    )?;
    let problem = to_conic(&system, utilities);
    let sol = conic::solve(&problem, &tol.conic_settings())?;

    let status = match sol.status {
        ConicStatus::Optimal => SolveStatus::Optimal,
        ConicStatus::PrimalInfeasible => SolveStatus::Infeasible,
        _ => SolveStatus::ToleranceLimit,
    };
    if status == SolveStatus::Infeasible || sol.x.iter().any(|v| !v.is_finite()) {
        return Ok(Solution::infeasible(instance, status));
    }
    let (mut x, mut flow) = system.unpack(&sol.x, instance.network.v0);
    // Interior iterates sit strictly inside [0,1]; clean up round-off only.
    for v in &mut x {
        *v = v.clamp(0.0, 1.0);
    }
    let mut residual = system.residuals(&sol.x).max_violation();

    if polish && status == SolveStatus::Optimal {
        if let Some((polished, res)) = min_loss_flow(instance, &x, tol)? {
            if max_exactness_gap(&polished, &instance.network) < max_exactness_gap(&flow, &instance.network) {
                flow = polished;
                residual = residual.max(res);
            }
        }
    }
    let status = if status == SolveStatus::Optimal && residual > residual_tolerance(tol) {
        SolveStatus::ToleranceLimit
    } else {
        status
    };

    let mut reduced_costs = vec![0.0; x.len()];
    let mut aty = vec![0.0; system.num_vars()];
    for (row, &y) in problem.eq_rows.iter().zip(&sol.y) {
        for &(j, a) in row {
            aty[j] += a * y;
        }
    }
    for (k, col) in system.vars.customer.iter().enumerate() {
        if let Some(c) = col {
            reduced_costs[k] = -(problem.c[*c] + aty[*c]);
        }
    }

    Ok(Solution {
        objective: evaluate_objective(&x, utilities),
        exactness: max_exactness_gap(&flow, &instance.network),
        x,
        flow,
        status,
        mip_gap: 0.0,
        reduced_costs,
        nodes: 0,
    })
}

/// Minimum-loss relaxed state for fixed decisions, with its row residual.
fn min_loss_flow(
    instance: &DrInstance,
    x: &[f64],
    tol: &SolverTolerances,
) -> Result<Option<(FlowState, f64)>, OptError> {
    let fixed: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
    let system = assemble_constraints_fixed(
        &instance.network,
        &instance.customers,
        instance.capacity_pu,
        &fixed,
    )?;
    let mut problem = to_conic(&system, &[]);
    for (l, &j) in system.vars.ell.iter().enumerate() {
        problem.c[j] = instance.network.lines[l].impedance.re.max(f64::MIN_POSITIVE);
    }
    let sol = conic::solve(&problem, &tol.conic_settings())?;
    if sol.status != ConicStatus::Optimal {
        return Ok(None);
    }
    let residual = system.residuals(&sol.x).max_violation();
    Ok(Some((system.unpack(&sol.x, instance.network.v0).1, residual)))
}

/// Absolute residual accepted on the assembled rows at an optimal point.
pub(crate) fn residual_tolerance(tol: &SolverTolerances) -> f64 {
    (100.0 * tol.feas_tol).max(1e-7)
}

/// Builds `min -u'x` in conic form; `utilities` is indexed by customer and
/// only read for free decisions.
fn to_conic(system: &ConstraintSystem, utilities: &[f64]) -> ConicProblem {
    let n = system.num_vars();
    let mut c = vec![0.0; n];
    for (k, col) in system.vars.customer.iter().enumerate() {
        if let Some(j) = col {
            c[*j] = -utilities[k];
        }
    }

    let mut bounds = Vec::with_capacity(2 * system.bounds.len());
    for b in &system.bounds {
        bounds.push(BoundRow {
            var: b.var,
            side: BoundSide::Lower,
            value: b.lower,
        });
        bounds.push(BoundRow {
            var: b.var,
            side: BoundSide::Upper,
            value: b.upper,
        });
    }

    let mut socs = Vec::with_capacity(system.cones.len() + 1);
    for row in &system.cones {
        // (ell + v, ell - v, 2P, 2Q) in SOC, written as h - G x.
        match row.v_from {
            VoltageTerm::Var(v) => socs.push(SocBlock {
                vars: vec![row.ell, v, row.p, row.q],
                g: vec![
                    -1.0, -1.0, 0.0, 0.0, //
                    -1.0, 1.0, 0.0, 0.0, //
                    0.0, 0.0, -2.0, 0.0, //
                    0.0, 0.0, 0.0, -2.0,
                ],
                h: vec![0.0; 4],
            }),
            VoltageTerm::Fixed(v0) => socs.push(SocBlock {
                vars: vec![row.ell, row.p, row.q],
                g: vec![
                    -1.0, 0.0, 0.0, //
                    -1.0, 0.0, 0.0, //
                    0.0, -2.0, 0.0, //
                    0.0, 0.0, -2.0,
                ],
                h: vec![v0, -v0, 0.0, 0.0],
            }),
        }
    }
    let cap = &system.capacity;
    let mut vars = cap.p_vars.clone();
    vars.extend(&cap.q_vars);
    let np = cap.p_vars.len();
    let nv = vars.len();
    let mut g = vec![0.0; 3 * nv];
    for j in 0..np {
        g[nv + j] = -1.0;
    }
    for j in np..nv {
        g[2 * nv + j] = -1.0;
    }
    socs.push(SocBlock {
        vars,
        g,
        h: vec![cap.capacity, 0.0, 0.0],
    });

    ConicProblem {
        num_vars: n,
        c,
        eq_rows: system.equalities.iter().map(|r| r.coeffs.clone()).collect(),
        b: system.equalities.iter().map(|r| r.rhs).collect(),
        bounds,
        socs,
    }
}
