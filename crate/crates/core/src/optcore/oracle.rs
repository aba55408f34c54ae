use super::{evaluate_objective, DrInstance, OptError, Solution, SolveStatus};
use crate::powerflow::{bus_loads, max_exactness_gap, sweep_power_flow, FlowState, SweepOptions};

pub const ORACLE_MAX_CUSTOMERS: usize = 16;

/// Slack allowed on voltage and capacity limits when checking an exact flow.
const LIMIT_TOL: f64 = 1e-9;

/// Exact power flow for fixed decisions, if it meets the voltage band and the
/// source capacity.
pub(crate) fn exact_feasible(instance: &DrInstance, x: &[f64]) -> Option<FlowState> {
    let net = &instance.network;
    let loads = bus_loads(net, &instance.customers, x);
    let state = sweep_power_flow(net, &loads, &SweepOptions::default()).ok()?;
    let band_ok = state.v[1..]
        .iter()
        .all(|&v| v >= net.v_min - LIMIT_TOL && v <= net.v_max + LIMIT_TOL);
    let children = net.child_lines();
    let source: num_complex::Complex64 = children[0].iter().map(|&l| state.s_flow[l]).sum();
    let cap_ok = source.norm() <= instance.capacity_pu + LIMIT_TOL;
    (band_ok && cap_ok).then_some(state)
}

/// Exhaustive search over all 0/1 decisions, each checked with the exact
/// branch flow equations.
pub fn brute_force_oracle(instance: &DrInstance, utilities: &[f64]) -> Result<Solution, OptError> {
    super::check_utilities(instance, utilities)?;
    let n = instance.num_customers();
    if n > ORACLE_MAX_CUSTOMERS {
        return Err(OptError::OracleTooLarge {
            max: ORACLE_MAX_CUSTOMERS,
            got: n,
        });
    }
    if instance.customers.iter().any(|c| c.elastic) {
        return Err(OptError::OracleElastic);
    }
    let mut best: Option<(f64, Vec<f64>, FlowState)> = None;
    for mask in 0u32..(1u32 << n) {
        let x: Vec<f64> = (0..n).map(|k| f64::from((mask >> k) & 1)).collect();
        let objective = evaluate_objective(&x, utilities);
        if best.as_ref().is_some_and(|(b, _, _)| objective <= *b) {
            continue;
        }
        if let Some(state) = exact_feasible(instance, &x) {
            best = Some((objective, x, state));
        }
    }
    Ok(match best {
        Some((objective, x, flow)) => Solution {
            exactness: max_exactness_gap(&flow, &instance.network),
            objective,
            x,
            flow,
            status: SolveStatus::Optimal,
            mip_gap: 0.0,
            reduced_costs: vec![0.0; n],
            nodes: 1 << n,
        },
        None => Solution::infeasible(instance, SolveStatus::Infeasible),
    })
}
