//! Demand response over radial distribution feeders with differentially
//! private utilities.

pub mod conic;
pub mod customer;
pub mod dpmech;
pub mod netmodel;
pub mod optcore;
pub mod powerflow;
pub mod rng;
pub mod scenario;
pub mod harness;
