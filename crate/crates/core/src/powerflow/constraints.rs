use num_complex::Complex64;

use super::{FlowState, PowerFlowError};
use crate::customer::Customer;
use crate::netmodel::Network;

/// Positions of the decision and network variables in the flat vector.
///
/// Layout: free customer decisions, then `v` for every non-source bus, then
/// `ell`, `P`, `Q` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct VarIndex {
    /// Column of each customer's decision, `None` when the decision is fixed.
    pub customer: Vec<Option<usize>>,
    /// Column of each bus voltage, `None` for the source.
    pub v: Vec<Option<usize>>,
    pub ell: Vec<usize>,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub num_vars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `v_j = v_i + |z|^2 ell - 2 Re(z* S)`.
    VoltageDrop { line: usize },
    /// Real part of the sending-end power balance.
    RealBalance { line: usize },
    /// Imaginary part of the sending-end power balance.
    ReactiveBalance { line: usize },
}

/// `sum coeffs * vars = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub kind: RowKind,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * values[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBound {
    pub var: usize,
    pub lower: f64,
    pub upper: f64,
}

/// `|sum over source lines of S| <= capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub p_vars: Vec<usize>,
    pub q_vars: Vec<usize>,
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoltageTerm {
    Var(usize),
    Fixed(f64),
}

impl VoltageTerm {
    pub fn value(&self, values: &[f64]) -> f64 {
        match *self {
            VoltageTerm::Var(j) => values[j],
            VoltageTerm::Fixed(v) => v,
        }
    }
}

/// Rotated cone `ell * v_from >= P^2 + Q^2` for one line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeRow {
    pub line: usize,
    pub ell: usize,
    pub v_from: VoltageTerm,
    pub p: usize,
    pub q: usize,
}

/// SOC-relaxed branch flow constraints with loads affine in the decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub vars: VarIndex,
    pub equalities: Vec<LinearRow>,
    pub bounds: Vec<VarBound>,
    pub capacity: CapacityRow,
    pub cones: Vec<ConeRow>,
    /// Customer decisions that were fixed at assembly time.
    pub fixed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintResiduals {
    pub equality: f64,
    pub bound: f64,
    pub capacity: f64,
    /// Largest `|S|^2/v - ell` over lines, clipped at zero.
    pub cone: f64,
    /// Largest `|ell - |S|^2/v|`; zero when every cone is tight.
    pub cone_gap: f64,
}

impl ConstraintResiduals {
    pub fn max_violation(&self) -> f64 {
        self.equality.max(self.bound).max(self.capacity).max(self.cone)
    }
}

pub fn assemble_constraints(
    network: &Network,
    customers: &[Customer],
    capacity_pu: f64,
) -> Result<ConstraintSystem, PowerFlowError> {
    assemble_constraints_fixed(network, customers, capacity_pu, &vec![None; customers.len()])
}

/// Like [`assemble_constraints`], with some decisions pinned to constants.
/// Pinned customers contribute a constant load and get no column.
pub fn assemble_constraints_fixed(
    network: &Network,
    customers: &[Customer],
    capacity_pu: f64,
    fixed: &[Option<f64>],
) -> Result<ConstraintSystem, PowerFlowError> {
    if fixed.len() != customers.len() {
        return Err(PowerFlowError::FixingLength {
            expected: customers.len(),
            got: fixed.len(),
        });
    }
    check_attachment(network, customers)?;

    let nb = network.num_buses();
    let nl = network.lines.len();
    let mut col = 0;
    let mut next = || {
        col += 1;
        col - 1
    };
    let customer_cols: Vec<Option<usize>> = fixed
        .iter()
        .map(|f| if f.is_some() { None } else { Some(next()) })
        .collect();
    let v_cols: Vec<Option<usize>> = (0..nb)
        .map(|b| if b == 0 { None } else { Some(next()) })
        .collect();
    let ell: Vec<usize> = (0..nl).map(|_| next()).collect();
    let p: Vec<usize> = (0..nl).map(|_| next()).collect();
    let q: Vec<usize> = (0..nl).map(|_| next()).collect();
    let num_vars = col;

    let children = network.child_lines();
    let mut equalities = Vec::with_capacity(3 * nl);
    for (l, line) in network.lines.iter().enumerate() {
        let (i, j) = (line.from_bus, line.to_bus);
        let z = line.impedance;

        let mut coeffs = vec![(v_cols[j].expect("line into source bus"), 1.0)];
        let mut rhs = 0.0;
        match v_cols[i] {
            Some(vi) => coeffs.push((vi, -1.0)),
            None => rhs = network.v0,
        }
        coeffs.push((ell[l], -z.norm_sqr()));
        coeffs.push((p[l], 2.0 * z.re));
        coeffs.push((q[l], 2.0 * z.im));
        equalities.push(LinearRow {
            kind: RowKind::VoltageDrop { line: l },
            coeffs,
            rhs,
        });

        let mut real = vec![(p[l], 1.0), (ell[l], -z.re)];
        let mut imag = vec![(q[l], 1.0), (ell[l], -z.im)];
        for &c in &children[j] {
            real.push((p[c], -1.0));
            imag.push((q[c], -1.0));
        }
        let mut const_load = Complex64::new(0.0, 0.0);
        for &k in &network.buses[j].attached_customers {
            let s = customers[k].demand;
            match (customer_cols[k], fixed[k]) {
                (Some(xc), _) => {
                    real.push((xc, -s.re));
                    imag.push((xc, -s.im));
                }
                (None, Some(value)) => const_load += s * value,
                (None, None) => unreachable!(),
            }
        }
        equalities.push(LinearRow {
            kind: RowKind::RealBalance { line: l },
            coeffs: real,
            rhs: const_load.re,
        });
        equalities.push(LinearRow {
            kind: RowKind::ReactiveBalance { line: l },
            coeffs: imag,
            rhs: const_load.im,
        });
    }

    let mut bounds = Vec::new();
    for xc in customer_cols.iter().flatten() {
        bounds.push(VarBound {
            var: *xc,
            lower: 0.0,
            upper: 1.0,
        });
    }
    for vc in v_cols.iter().flatten() {
        bounds.push(VarBound {
            var: *vc,
            lower: network.v_min,
            upper: network.v_max,
        });
    }

    let root_lines: Vec<usize> = children[0].clone();
    let capacity = CapacityRow {
        p_vars: root_lines.iter().map(|&l| p[l]).collect(),
        q_vars: root_lines.iter().map(|&l| q[l]).collect(),
        capacity: capacity_pu,
    };

    let cones = network
        .lines
        .iter()
        .enumerate()
        .map(|(l, line)| ConeRow {
            line: l,
            ell: ell[l],
            v_from: match v_cols[line.from_bus] {
                Some(c) => VoltageTerm::Var(c),
                None => VoltageTerm::Fixed(network.v0),
            },
            p: p[l],
            q: q[l],
        })
        .collect();

    Ok(ConstraintSystem {
        vars: VarIndex {
            customer: customer_cols,
            v: v_cols,
            ell,
            p,
            q,
            num_vars,
        },
        equalities,
        bounds,
        capacity,
        cones,
        fixed: fixed.to_vec(),
    })
}

fn check_attachment(network: &Network, customers: &[Customer]) -> Result<(), PowerFlowError> {
    let violations = network.validate();
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(PowerFlowError::Network(msg.join("; ")));
    }
    let mut seen = vec![false; customers.len()];
    for bus in &network.buses {
        for &k in &bus.attached_customers {
            let customer = customers.get(k).ok_or(PowerFlowError::UnknownCustomer {
                bus: bus.id,
                customer: k,
            })?;
            if customer.bus != bus.id {
                return Err(PowerFlowError::BusMismatch {
                    customer: k,
                    attached: bus.id,
                    recorded: customer.bus,
                });
            }
            seen[k] = true;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(PowerFlowError::UnknownBus {
            customer: k,
            bus: customers[k].bus,
        });
    }
    Ok(())
}

impl ConstraintSystem {
    pub fn num_vars(&self) -> usize {
        self.vars.num_vars
    }

    pub fn num_free_customers(&self) -> usize {
        self.vars.customer.iter().flatten().count()
    }

    /// Flattens full-length decisions plus a network state into column order.
    /// Entries for fixed decisions are ignored.
    pub fn pack(&self, x: &[f64], state: &FlowState) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for (k, col) in self.vars.customer.iter().enumerate() {
            if let Some(c) = col {
                out[*c] = x[k];
            }
        }
        for (b, col) in self.vars.v.iter().enumerate() {
            if let Some(c) = col {
                out[*c] = state.v[b];
            }
        }
        for l in 0..self.vars.ell.len() {
            out[self.vars.ell[l]] = state.ell[l];
            out[self.vars.p[l]] = state.s_flow[l].re;
            out[self.vars.q[l]] = state.s_flow[l].im;
        }
        out
    }

    /// Splits a column vector back into full-length decisions and a state.
    pub fn unpack(&self, values: &[f64], v0: f64) -> (Vec<f64>, FlowState) {
        let x = self
            .vars
            .customer
            .iter()
            .zip(&self.fixed)
            .map(|(col, fix)| match (col, fix) {
                (Some(c), _) => values[*c],
                (None, Some(f)) => *f,
                (None, None) => 0.0,
            })
            .collect();
        let v = self
            .vars
            .v
            .iter()
            .map(|col| col.map_or(v0, |c| values[c]))
            .collect();
        let nl = self.vars.ell.len();
        let state = FlowState {
            v,
            ell: (0..nl).map(|l| values[self.vars.ell[l]]).collect(),
            s_flow: (0..nl)
                .map(|l| Complex64::new(values[self.vars.p[l]], values[self.vars.q[l]]))
                .collect(),
        };
        (x, state)
    }

    /// Absolute violation of every row family at `values`.
    pub fn residuals(&self, values: &[f64]) -> ConstraintResiduals {
        let equality = self
            .equalities
            .iter()
            .map(|row| (row.eval(values) - row.rhs).abs())
            .fold(0.0, f64::max);
        let bound = self
            .bounds
            .iter()
            .map(|b| (b.lower - values[b.var]).max(values[b.var] - b.upper))
            .fold(0.0, f64::max);
        let p: f64 = self.capacity.p_vars.iter().map(|&j| values[j]).sum();
        let q: f64 = self.capacity.q_vars.iter().map(|&j| values[j]).sum();
        let capacity = (p.hypot(q) - self.capacity.capacity).max(0.0);
        let mut cone = 0.0_f64;
        let mut cone_gap = 0.0_f64;
        for row in &self.cones {
            let v = row.v_from.value(values);
            let s2 = values[row.p].powi(2) + values[row.q].powi(2);
            let diff = values[row.ell] - s2 / v;
            cone = cone.max(-diff);
            cone_gap = cone_gap.max(diff.abs());
        }
        ConstraintResiduals {
            equality,
            bound,
            capacity,
            cone,
            cone_gap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::build_canadian_feeder;
    use crate::powerflow::{bus_loads, sweep_power_flow, SweepOptions};

    fn one_customer() -> (Network, Vec<Customer>) {
        let net = build_canadian_feeder(1.0, 4e6).unwrap();
        let s = Complex64::new(1e6 / net.s_base, 0.0);
        let customers = vec![Customer::inelastic(0, 3, s, 1.0)];
        (net.with_customers(&[3]).unwrap(), customers)
    }

    #[test]
    fn structural_counts() {
        let (net, customers) = one_customer();
        let sys = assemble_constraints(&net, &customers, 1.0).unwrap();
        assert_eq!(sys.cones.len(), 3);
        let balance = sys
            .equalities
            .iter()
            .filter(|r| !matches!(r.kind, RowKind::VoltageDrop { .. }))
            .count();
        assert_eq!(balance, 6);
        assert_eq!(sys.equalities.len(), 9);
        // n + (|buses| - 1) + 3 |lines|
        assert_eq!(sys.num_vars(), 1 + 3 + 9);
        assert_eq!(sys.bounds.len(), 1 + 3);
        assert_eq!(sys.capacity.p_vars, vec![sys.vars.p[0]]);
    }

    #[test]
    fn zero_load_point_is_feasible() {
        let net = build_canadian_feeder(1.0, 4e6).unwrap();
        let sys = assemble_constraints(&net, &[], 1.0).unwrap();
        let values = sys.pack(&[], &FlowState::flat(&net));
        let r = sys.residuals(&values);
        assert_eq!(r.max_violation(), 0.0);
        assert_eq!(r.cone_gap, 0.0);
    }

    #[test]
    fn sweep_state_satisfies_rows() {
        let (net, customers) = one_customer();
        let sys = assemble_constraints(&net, &customers, 1.0).unwrap();
        let loads = bus_loads(&net, &customers, &[1.0]);
        let state = sweep_power_flow(&net, &loads, &SweepOptions::default()).unwrap();
        let values = sys.pack(&[1.0], &state);
        let r = sys.residuals(&values);
        assert!(r.max_violation() <= 1e-8, "{r:?}");
        assert!(r.cone_gap <= 1e-8);
        let (x, back) = sys.unpack(&values, net.v0);
        assert_eq!(x, vec![1.0]);
        assert_eq!(back, state);
    }

    #[test]
    fn fixed_customers_drop_out() {
        let (net, customers) = one_customer();
        let sys = assemble_constraints_fixed(&net, &customers, 1.0, &[Some(1.0)]).unwrap();
        assert_eq!(sys.num_vars(), 12);
        assert_eq!(sys.vars.customer, vec![None]);
        let last = &sys.equalities[7];
        assert!(matches!(last.kind, RowKind::RealBalance { line: 2 }));
        assert!((last.rhs - customers[0].demand.re).abs() < 1e-15);
    }

    #[test]
    fn zero_capacity_forces_zero_decisions() {
        // With no flow leaving the source, the balance rows on a lossy
        // path force every non-negative load term to zero.
        let (net, customers) = one_customer();
        let sys = assemble_constraints(&net, &customers, 0.0).unwrap();
        let loads = bus_loads(&net, &customers, &[1.0]);
        let state = sweep_power_flow(&net, &loads, &SweepOptions::default()).unwrap();
        assert!(sys.residuals(&sys.pack(&[1.0], &state)).capacity > 0.1);
        let zero = sys.pack(&[0.0], &FlowState::flat(&net));
        assert_eq!(sys.residuals(&zero).max_violation(), 0.0);
    }

    #[test]
    fn unknown_bus_rejected() {
        let (net, mut customers) = one_customer();
        customers[0].bus = 2;
        assert!(matches!(
            assemble_constraints(&net, &customers, 1.0),
            Err(PowerFlowError::BusMismatch { .. })
        ));
        let detached = build_canadian_feeder(1.0, 4e6).unwrap();
        assert!(matches!(
            assemble_constraints(&detached, &customers, 1.0),
            Err(PowerFlowError::UnknownBus { .. })
        ));
    }
}
