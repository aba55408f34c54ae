use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A demand-response participant as seen by the optimizer (per-unit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: usize,
    /// Load bus the customer is served from.
    pub bus: usize,
    /// Complex power demand `S_k`, pu. Both parts are non-negative.
    pub demand: Complex64,
    /// True utility `u_k` for serving the full demand.
    pub utility: f64,
    /// Elastic demand may be served partially; inelastic is all-or-nothing.
    pub elastic: bool,
}

impl Customer {
    pub fn inelastic(id: usize, bus: usize, demand: Complex64, utility: f64) -> Self {
        Self {
            id,
            bus,
            demand,
            utility,
            elastic: false,
        }
    }
}
