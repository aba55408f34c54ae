//! Branch flow model of a radial feeder.
//!
//! [`assemble_constraints`] produces the SOC-relaxed constraint set used by the
//! optimizer; [`sweep_power_flow`] solves the exact (non-relaxed) equations for
//! fixed loads and serves as an independent check on the optimizer output.

mod constraints;
mod sweep;

pub use constraints::{
    assemble_constraints, assemble_constraints_fixed, CapacityRow, ConeRow, ConstraintResiduals,
    ConstraintSystem, LinearRow, RowKind, VarBound, VarIndex, VoltageTerm,
};
pub use sweep::{bfm_residuals, bus_loads, sweep_power_flow, BfmResiduals, SweepOptions};

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::Network;

/// Default certification tolerance for relaxation exactness, pu.
pub const EXACTNESS_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("customer {customer} references unknown bus {bus}")]
    UnknownBus { customer: usize, bus: usize },
    #[error("bus {bus} lists customer {customer} which does not exist")]
    UnknownCustomer { bus: usize, customer: usize },
    #[error("customer {customer} attached to bus {attached} but records bus {recorded}")]
    BusMismatch {
        customer: usize,
        attached: usize,
        recorded: usize,
    },
    #[error("expected {expected} fixings, got {got}")]
    FixingLength { expected: usize, got: usize },
    #[error("expected {expected} bus loads, got {got}")]
    LoadLength { expected: usize, got: usize },
    #[error("sweep did not converge after {iterations} iterations (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("invalid sweep options: {0}")]
    InvalidOptions(String),
    #[error("invalid network: {0}")]
    Network(String),
}

/// Network operating point in branch-flow variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    /// Voltage magnitude square per bus, including the source.
    pub v: Vec<f64>,
    /// Current magnitude square per line.
    pub ell: Vec<f64>,
    /// Sending-end complex power per line.
    pub s_flow: Vec<Complex64>,
}

impl FlowState {
    /// The zero-load operating point.
    pub fn flat(network: &Network) -> Self {
        Self {
            v: vec![network.v0; network.num_buses()],
            ell: vec![0.0; network.lines.len()],
            s_flow: vec![Complex64::new(0.0, 0.0); network.lines.len()],
        }
    }

    /// Writes the state as `kind,index,value_re,value_im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "index", "re", "im"])?;
        for (i, v) in self.v.iter().enumerate() {
            w.write_record(["v", &i.to_string(), &v.to_string(), "0"])?;
        }
        for (i, l) in self.ell.iter().enumerate() {
            w.write_record(["ell", &i.to_string(), &l.to_string(), "0"])?;
        }
        for (i, s) in self.s_flow.iter().enumerate() {
            w.write_record(["s", &i.to_string(), &s.re.to_string(), &s.im.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-line slack `ell - |S|^2 / v_from` of the current-definition equation.
///
/// Zero on every line means the SOC relaxation is tight at `state`.
pub fn exactness_gap(state: &FlowState, network: &Network) -> Vec<f64> {
    network
        .lines
        .iter()
        .enumerate()
        .map(|(idx, line)| {
            let v_from = state.v[line.from_bus];
            state.ell[idx] - state.s_flow[idx].norm_sqr() / v_from
        })
        .collect()
}

pub fn max_exactness_gap(state: &FlowState, network: &Network) -> f64 {
    exactness_gap(state, network)
        .into_iter()
        .fold(0.0, |acc, g| acc.max(g.abs()))
}
