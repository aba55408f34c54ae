use num_complex::Complex64;

use super::{FlowState, PowerFlowError};
use crate::customer::Customer;
use crate::netmodel::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation factor on the current update; 1.0 is plain Gauss iteration.
    pub damping: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

/// Worst absolute violation of each branch flow equation, pu.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BfmResiduals {
    /// `ell = |S|^2 / v_from`
    pub current: f64,
    /// `v_to = v_from + |z|^2 ell - 2 Re(z* S)`
    pub voltage: f64,
    /// `S = sum downstream S + load + z ell`
    pub balance: f64,
}

impl BfmResiduals {
    pub fn max(&self) -> f64 {
        self.current.max(self.voltage).max(self.balance)
    }
}

/// Aggregates `S_k x_k` onto buses.
pub fn bus_loads(network: &Network, customers: &[Customer], x: &[f64]) -> Vec<Complex64> {
    let mut loads = vec![Complex64::new(0.0, 0.0); network.num_buses()];
    for (c, &xk) in customers.iter().zip(x) {
        loads[c.bus] += c.demand * xk;
    }
    loads
}

pub fn bfm_residuals(network: &Network, loads: &[Complex64], state: &FlowState) -> BfmResiduals {
    let children = network.child_lines();
    let mut r = BfmResiduals::default();
    for (l, line) in network.lines.iter().enumerate() {
        let (i, j) = (line.from_bus, line.to_bus);
        let z = line.impedance;
        let s = state.s_flow[l];
        r.current = r.current.max((state.ell[l] - s.norm_sqr() / state.v[i]).abs());
        let v_to = state.v[i] + z.norm_sqr() * state.ell[l] - 2.0 * (z.conj() * s).re;
        r.voltage = r.voltage.max((state.v[j] - v_to).abs());
        let downstream: Complex64 = children[j].iter().map(|&c| state.s_flow[c]).sum();
        let expected = downstream + loads[j] + z * state.ell[l];
        r.balance = r.balance.max((s - expected).norm());
    }
    r
}

/// Backward/forward sweep on the exact branch flow equations for fixed loads.
///
/// The backward pass accumulates sending-end powers leaf to root using the
/// previous losses; the forward pass then propagates voltages root to leaf.
pub fn sweep_power_flow(
    network: &Network,
    loads: &[Complex64],
    opts: &SweepOptions,
) -> Result<FlowState, PowerFlowError> {
    if !(opts.tol > 0.0) || !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(PowerFlowError::InvalidOptions(format!("{opts:?}")));
    }
    if loads.len() != network.num_buses() {
        return Err(PowerFlowError::LoadLength {
            expected: network.num_buses(),
            got: loads.len(),
        });
    }
    let order = network.lines_from_root();
    if order.len() != network.lines.len() {
        return Err(PowerFlowError::Network("lines not reachable from source".into()));
    }
    let children = network.child_lines();
    let mut state = FlowState::flat(network);
    let mut residual = f64::INFINITY;

    for _ in 0..opts.max_iter {
        for &l in order.iter().rev() {
            let line = &network.lines[l];
            let j = line.to_bus;
            let downstream: Complex64 = children[j].iter().map(|&c| state.s_flow[c]).sum();
            let s = downstream + loads[j] + line.impedance * state.ell[l];
            state.s_flow[l] = s;
            let target = s.norm_sqr() / state.v[line.from_bus];
            state.ell[l] += opts.damping * (target - state.ell[l]);
        }
        for &l in &order {
            let line = &network.lines[l];
            let z = line.impedance;
            let (i, j) = (line.from_bus, line.to_bus);
            state.v[j] =
                state.v[i] + z.norm_sqr() * state.ell[l] - 2.0 * (z.conj() * state.s_flow[l]).re;
        }
        if state.v.iter().any(|&v| !(v > 0.0)) {
            break;
        }
        residual = bfm_residuals(network, loads, &state).max();
        if residual <= opts.tol {
            return Ok(state);
        }
    }
    Err(PowerFlowError::Diverged {
        iterations: opts.max_iter,
        residual,
    })
}
