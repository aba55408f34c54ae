//! Primal heuristic for all-or-nothing decisions: greedy filling of the
//! remaining source capacity followed by pairwise exchanges, every move
//! checked against the exact branch flow equations.

use num_complex::Complex64;

use super::oracle::exact_feasible;
use super::{evaluate_objective, DrInstance};
use crate::powerflow::FlowState;

const MAX_ROUNDS: usize = 12;

fn source_flow(instance: &DrInstance, state: &FlowState) -> Complex64 {
    instance.network.child_lines()[0]
        .iter()
        .map(|&l| state.s_flow[l])
        .sum()
}

/// First-order growth of the source apparent power when each customer's
/// demand is added at the current operating point, losses included.
fn marginal_sizes(instance: &DrInstance, state: &FlowState) -> Vec<f64> {
    let net = &instance.network;
    let parent = net.parent_lines();
    let s01 = source_flow(instance, state);
    // Multiplier mapping a unit load at each bus to the change of S01.
    let mut bus_factor = vec![(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)); net.num_buses()];
    for b in 0..net.num_buses() {
        let mut real = Complex64::new(1.0, 0.0);
        let mut imag = Complex64::new(0.0, 0.0);
        let mut cursor = parent[b];
        while let Some(l) = cursor {
            let line = &net.lines[l];
            let s = state.s_flow[l];
            let v = state.v[line.from_bus];
            // d(losses)/dP and d(losses)/dQ of this line.
            real += line.impedance * (2.0 * s.re / v);
            imag += line.impedance * (2.0 * s.im / v);
            cursor = parent[line.from_bus];
        }
        bus_factor[b] = (real, imag);
    }
    let dir = if s01.norm() > 1e-12 {
        s01 / s01.norm()
    } else {
        Complex64::new(0.0, 0.0)
    };
    instance
        .customers
        .iter()
        .map(|c| {
            let (fr, fi) = bus_factor[c.bus];
            let ds = c.demand + (fr - 1.0) * c.demand.re + fi * c.demand.im;
            let ds = if dir.norm() > 0.0 {
                (dir.conj() * ds).re
            } else {
                ds.norm()
            };
            ds.max(1e-15)
        })
        .collect()
}

/// Largest prefix of `added` that can be switched on together, applied to `x`.
fn commit_prefix(instance: &DrInstance, x: &mut [f64], added: &[usize]) -> Option<FlowState> {
    let apply = |x: &mut [f64], len: usize, on: bool| {
        for &k in &added[..len] {
            x[k] = if on { 1.0 } else { 0.0 };
        }
    };
    apply(x, added.len(), true);
    if let Some(state) = exact_feasible(instance, x) {
        return Some(state);
    }
    apply(x, added.len(), false);
    let (mut lo, mut hi) = (0, added.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        apply(x, mid, true);
        let ok = exact_feasible(instance, x).is_some();
        apply(x, mid, false);
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return None;
    }
    apply(x, lo, true);
    exact_feasible(instance, x)
}

/// Improves a feasible 0/1 assignment. Returns `None` when `x0` itself is
/// infeasible.
pub(crate) fn local_improve(
    instance: &DrInstance,
    utilities: &[f64],
    x0: &[f64],
) -> Option<(Vec<f64>, FlowState)> {
    let mut x = x0.to_vec();
    // Customers with non-positive utility never help.
    for (k, u) in utilities.iter().enumerate() {
        if *u <= 0.0 {
            x[k] = 0.0;
        }
    }
    let mut state = exact_feasible(instance, &x)?;
    let capacity = instance.capacity_pu;

    for _ in 0..MAX_ROUNDS {
        let before = evaluate_objective(&x, utilities);

        // Greedy fill by utility per unit of source capacity.
        let sizes = marginal_sizes(instance, &state);
        let slack = capacity - source_flow(instance, &state).norm();
        let mut order: Vec<usize> = (0..x.len())
            .filter(|&k| x[k] == 0.0 && utilities[k] > 0.0 && sizes[k] <= slack)
            .collect();
        order.sort_by(|&a, &b| {
            (utilities[b] / sizes[b])
                .total_cmp(&(utilities[a] / sizes[a]))
                .then(a.cmp(&b))
        });
        let mut left = slack;
        let added: Vec<usize> = order
            .into_iter()
            .filter(|&k| {
                let fits = sizes[k] <= left;
                if fits {
                    left -= sizes[k];
                }
                fits
            })
            .collect();
        if !added.is_empty() {
            if let Some(s) = commit_prefix(instance, &mut x, &added) {
                state = s;
            }
        }

        // Best single exchange that fits the remaining slack.
        let sizes = marginal_sizes(instance, &state);
        let slack = capacity - source_flow(instance, &state).norm();
        let mut outside: Vec<usize> = (0..x.len())
            .filter(|&k| x[k] == 0.0 && utilities[k] > 0.0)
            .collect();
        outside.sort_by(|&a, &b| sizes[a].total_cmp(&sizes[b]).then(a.cmp(&b)));
        // Prefix maxima of utility over customers sorted by size.
        let mut prefix_best: Vec<usize> = Vec::with_capacity(outside.len());
        for (pos, &k) in outside.iter().enumerate() {
            let best = match pos {
                0 => k,
                _ => {
                    let prev = prefix_best[pos - 1];
                    if utilities[k] > utilities[prev] {
                        k
                    } else {
                        prev
                    }
                }
            };
            prefix_best.push(best);
        }
        let mut best_swap: Option<(usize, usize, f64)> = None;
        for i in (0..x.len()).filter(|&k| x[k] == 1.0) {
            let limit = sizes[i] + slack;
            let count = outside.partition_point(|&k| sizes[k] <= limit);
            if count == 0 {
                continue;
            }
            let j = prefix_best[count - 1];
            let gain = utilities[j] - utilities[i];
            if gain > 0.0 && best_swap.is_none_or(|(_, _, g)| gain > g) {
                best_swap = Some((i, j, gain));
            }
        }
        if let Some((i, j, _)) = best_swap {
            x[i] = 0.0;
            x[j] = 1.0;
            match exact_feasible(instance, &x) {
                Some(s) => state = s,
                None => {
                    x[i] = 1.0;
                    x[j] = 0.0;
                }
            }
        }

        if evaluate_objective(&x, utilities) <= before {
            break;
        }
    }
    Some((x, state))
}
