use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::{debug, warn};

use super::heuristic::local_improve;
use super::{
    check_utilities, evaluate_objective, solve_relaxation, DrInstance, OptError, Solution,
    SolveStatus, SolverTolerances,
};
use crate::powerflow::max_exactness_gap;

/// Distance from {0, 1} below which a decision counts as integral.
const INTEGRALITY_TOL: f64 = 1e-6;

struct Node {
    bound: f64,
    id: usize,
    fixed: Vec<Option<f64>>,
    relaxed: Solution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: higher bound first, then older node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    ((bound - incumbent) / bound.abs().max(1.0)).max(0.0)
}

/// Most fractional inelastic decision, lowest index on ties.
fn branching_candidate(instance: &DrInstance, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in instance.customers.iter().enumerate() {
        if c.elastic {
            continue;
        }
        let frac = x[k].min(1.0 - x[k]);
        if frac > INTEGRALITY_TOL && best.is_none_or(|(_, f)| frac > f) {
            best = Some((k, frac));
        }
    }
    best.map(|(k, _)| k)
}

struct Search<'a> {
    instance: &'a DrInstance,
    utilities: &'a [f64],
    tol: &'a SolverTolerances,
    has_elastic: bool,
    incumbent: Option<Solution>,
    nodes: usize,
    inexact_relaxations: usize,
}

impl Search<'_> {
    fn incumbent_value(&self) -> f64 {
        self.incumbent
            .as_ref()
            .map_or(f64::NEG_INFINITY, |s| s.objective)
    }

    fn relax(&mut self, fixed: &[Option<f64>], polish: bool) -> Result<Solution, OptError> {
        self.nodes += 1;
        let sol = solve_relaxation(self.instance, self.utilities, self.tol, fixed, polish)?;
        if sol.status == SolveStatus::ToleranceLimit {
            self.inexact_relaxations += 1;
        }
        Ok(sol)
    }

    /// Checks a 0/1 assignment of the inelastic decisions and keeps it if it
    /// beats the incumbent.
    fn try_candidate(&mut self, x_int: &[f64]) -> Result<(), OptError> {
        let candidate = if self.has_elastic {
            let fixed: Vec<Option<f64>> = self
                .instance
                .customers
                .iter()
                .zip(x_int)
                .map(|(c, &x)| (!c.elastic).then_some(x))
                .collect();
            let sol = self.relax(&fixed, true)?;
            if sol.status != SolveStatus::Optimal {
                return Ok(());
            }
            sol
        } else {
            let Some((x, flow)) = local_improve(self.instance, self.utilities, x_int) else {
                return Ok(());
            };
            Solution {
                objective: evaluate_objective(&x, self.utilities),
                exactness: max_exactness_gap(&flow, &self.instance.network),
                x,
                flow,
                status: SolveStatus::Optimal,
                mip_gap: 0.0,
                reduced_costs: vec![0.0; x_int.len()],
                nodes: 0,
            }
        };
        if candidate.objective > self.incumbent_value() {
            debug!("incumbent {:.9e} after {} nodes", candidate.objective, self.nodes);
            self.incumbent = Some(candidate);
        }
        Ok(())
    }

    fn rounded(&self, x: &[f64], up: bool) -> Vec<f64> {
        self.instance
            .customers
            .iter()
            .zip(x)
            .map(|(c, &v)| {
                if c.elastic {
                    v
                } else if up {
                    (v - INTEGRALITY_TOL).ceil().clamp(0.0, 1.0)
                } else {
                    (v + INTEGRALITY_TOL).floor().clamp(0.0, 1.0)
                }
            })
            .collect()
    }
}

/// Pins inelastic decisions whose reduced cost alone exceeds the gap between
/// the root bound and the incumbent: flipping them cannot beat the incumbent.
fn reduced_cost_fixing(instance: &DrInstance, root: &Solution, incumbent: f64) -> Vec<Option<f64>> {
    let n = instance.num_customers();
    let mut fixed = vec![None; n];
    if root.status != SolveStatus::Optimal || incumbent == f64::NEG_INFINITY {
        return fixed;
    }
    let threshold = (root.objective - incumbent) + 1e-9 * root.objective.abs().max(1.0);
    let mut count = 0;
    for (k, c) in instance.customers.iter().enumerate() {
        if c.elastic {
            continue;
        }
        let (x, rc) = (root.x[k], root.reduced_costs[k]);
        if x <= INTEGRALITY_TOL && rc < -threshold {
            fixed[k] = Some(0.0);
            count += 1;
        } else if x >= 1.0 - INTEGRALITY_TOL && rc > threshold {
            fixed[k] = Some(1.0);
            count += 1;
        }
    }
    debug!("reduced-cost fixing pinned {count} of {n} decisions");
    fixed
}

/// Best-first branch and bound over the inelastic decisions; elastic
/// decisions stay continuous.
pub fn solve_binary(
    instance: &DrInstance,
    utilities: &[f64],
    tol: &SolverTolerances,
) -> Result<Solution, OptError> {
    check_utilities(instance, utilities)?;
    let n = instance.num_customers();
    let mut search = Search {
        instance,
        utilities,
        tol,
        has_elastic: instance.customers.iter().any(|c| c.elastic),
        incumbent: None,
        nodes: 0,
        inexact_relaxations: 0,
    };

    let root_fixed = vec![None; n];
    let root = search.relax(&root_fixed, false)?;
    if root.status == SolveStatus::Infeasible {
        let mut sol = Solution::infeasible(instance, SolveStatus::Infeasible);
        sol.nodes = search.nodes;
        return Ok(sol);
    }
    let x_down = search.rounded(&root.x, false);
    search.try_candidate(&x_down)?;
    let root_fixed = reduced_cost_fixing(instance, &root, search.incumbent_value());
    let mut heap = BinaryHeap::new();
    let mut next_id = 0;
    heap.push(Node {
        bound: root.objective,
        id: next_id,
        fixed: root_fixed,
        relaxed: root,
    });
    next_id += 1;

    let mut best_bound = f64::NEG_INFINITY;
    let mut limit_hit = false;
    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        let incumbent = search.incumbent_value();
        if incumbent > f64::NEG_INFINITY && relative_gap(node.bound, incumbent) <= tol.mip_gap {
            break;
        }
        let Some(k) = branching_candidate(instance, &node.relaxed.x) else {
            let x_int = search.rounded(&node.relaxed.x, false);
            search.try_candidate(&x_int)?;
            best_bound = f64::NEG_INFINITY;
            continue;
        };
        let x_down = search.rounded(&node.relaxed.x, false);
        search.try_candidate(&x_down)?;

        if search.nodes + 2 > tol.node_limit {
            best_bound = node.bound;
            heap.push(node);
            limit_hit = true;
            break;
        }
        for value in [1.0, 0.0] {
            let mut fixed = node.fixed.clone();
            fixed[k] = Some(value);
            let relaxed = search.relax(&fixed, false)?;
            if relaxed.status == SolveStatus::Infeasible {
                continue;
            }
            let bound = relaxed.objective.min(node.bound);
            let incumbent = search.incumbent_value();
            if incumbent > f64::NEG_INFINITY && relative_gap(bound, incumbent) <= tol.mip_gap {
                continue;
            }
            heap.push(Node {
                bound,
                id: next_id,
                fixed,
                relaxed,
            });
            next_id += 1;
        }
        best_bound = f64::NEG_INFINITY;
    }
    if let Some(top) = heap.peek() {
        best_bound = best_bound.max(top.bound);
    }

    let Some(mut sol) = search.incumbent.take() else {
        let mut sol = Solution::infeasible(instance, SolveStatus::Infeasible);
        if limit_hit {
            sol.status = SolveStatus::ToleranceLimit;
        }
        sol.nodes = search.nodes;
        return Ok(sol);
    };
    let bound = best_bound.max(sol.objective);
    sol.mip_gap = relative_gap(bound, sol.objective);
    sol.nodes = search.nodes;
    if limit_hit || sol.mip_gap > tol.mip_gap {
        sol.status = SolveStatus::ToleranceLimit;
    }
    if search.inexact_relaxations > 0 {
        warn!(
            "{} relaxations stopped at a tolerance limit; bounds may be loose",
            search.inexact_relaxations
        );
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::test_support::knapsack;
    use super::super::{brute_force_oracle, solve_continuous};
    use super::*;
    use crate::customer::Customer;
    use crate::netmodel::build_canadian_feeder;

    /// 0-1 knapsack by dynamic programming over integer weights.
    fn knapsack_dp(weights: &[usize], values: &[f64], cap: usize) -> f64 {
        let mut best = vec![0.0_f64; cap + 1];
        for (w, v) in weights.iter().zip(values) {
            for c in (*w..=cap).rev() {
                best[c] = best[c].max(best[c - w] + v);
            }
        }
        best[cap]
    }

    #[test]
    fn lossless_knapsack_matches_dp() {
        let d = [0.4, 0.35, 0.3];
        let u = [10.0, 6.0, 5.0];
        let inst = knapsack(&d, &u, 0.65);
        let sol = solve_binary(&inst, &u, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.x, vec![0.0, 1.0, 1.0]);
        assert_eq!(sol.objective, 11.0);
        assert_eq!(knapsack_dp(&[40, 35, 30], &u, 65), 11.0);
    }

    #[test]
    fn random_lossless_knapsacks_match_dp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(3..10);
            let w: Vec<usize> = (0..n).map(|_| rng.random_range(5..40)).collect();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
            let cap = rng.random_range(20..100);
            let d: Vec<f64> = w.iter().map(|&v| v as f64 / 100.0).collect();
            let inst = knapsack(&d, &u, cap as f64 / 100.0);
            let sol = solve_binary(&inst, &u, &SolverTolerances::default()).unwrap();
            let dp = knapsack_dp(&w, &u, cap);
            // Capacity slack from the 1e-9 impedance is far below any weight step.
            assert!((sol.objective - dp).abs() < 1e-6, "{} vs {dp}", sol.objective);
        }
    }

    #[test]
    fn zero_capacity_serves_nobody() {
        let inst = knapsack(&[0.1, 0.2], &[1.0, 2.0], 0.0);
        let sol = solve_binary(&inst, &[1.0, 2.0], &SolverTolerances::default()).unwrap();
        assert_eq!(sol.x, vec![0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn feeder_instances_match_oracle() {
        let net = build_canadian_feeder(1.0, 4e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(2..9);
            let customers: Vec<Customer> = (0..n)
                .map(|k| {
                    let mag = rng.random_range(0.02..0.2);
                    let angle = rng.random_range(0.0..0.6_f64);
                    Customer::inelastic(
                        k,
                        rng.random_range(1..4),
                        Complex64::from_polar(mag, angle),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            let inst = DrInstance::new(&net, customers, 0.3, 0.0, 1.0).unwrap();
            let u = inst.true_utilities();
            let tol = SolverTolerances::default();
            let bin = solve_binary(&inst, &u, &tol).unwrap();
            let brute = brute_force_oracle(&inst, &u).unwrap();
            let cont = solve_continuous(&inst, &u, &tol).unwrap();
            assert_eq!(bin.status, SolveStatus::Optimal);
            assert!((bin.objective - brute.objective).abs() < 1e-6);
            assert!(cont.objective >= bin.objective - 1e-6);
            assert!(bin.x.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }

    #[test]
    fn elastic_customers_stay_continuous() {
        let mut inst = knapsack(&[0.3, 0.3, 0.3], &[3.0, 2.0, 1.0], 0.5);
        inst.customers[1].elastic = true;
        let u = inst.true_utilities();
        let sol = solve_binary(&inst, &u, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && sol.x[2] == 0.0);
        assert!((sol.x[1] - 2.0 / 3.0).abs() < 1e-4, "{:?}", sol.x);
    }

    #[test]
    fn node_limit_reports_tolerance_limit() {
        let d: Vec<f64> = (0..12).map(|k| 0.05 + 0.01 * k as f64).collect();
        let u: Vec<f64> = d.iter().map(|v| v * (1.0 + v)).collect();
        let inst = knapsack(&d, &u, 0.77);
        let tol = SolverTolerances {
            node_limit: 2,
            ..Default::default()
        };
        let sol = solve_binary(&inst, &u, &tol).unwrap();
        assert!(sol.nodes <= 2);
        assert_eq!(sol.status, SolveStatus::ToleranceLimit);
    }
}
