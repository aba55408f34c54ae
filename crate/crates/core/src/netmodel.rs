//! Radial distribution networks in per-unit form.
//!
//! All internal quantities are per-unit on the network's `s_base`/`v_base`.
//! Voltages are stored as magnitude squares (`v = |V|^2`), which is what the
//! branch flow equations work with.

use std::collections::VecDeque;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Series impedance of the 700 MCM Cu XLPE feeder cable, ohm/km.
pub const FEEDER_R_OHM_PER_KM: f64 = 0.1529;
pub const FEEDER_X_OHM_PER_KM: f64 = 0.1406;
/// Feeder rating used as the per-unit power base, VA.
pub const FEEDER_S_BASE_VA: f64 = 8.7e6;
/// Feeder line-to-line voltage used as the per-unit voltage base, V.
pub const FEEDER_V_BASE_V: f64 = 12.47e3;
pub const FEEDER_AMPACITY_A: f64 = 400.0;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("section length must be positive, got {0} km")]
    NonPositiveLength(f64),
    #[error("capacity must be positive, got {0} VA")]
    NonPositiveCapacity(f64),
    #[error("per-unit bases must be positive (s_base={s_base}, v_base={v_base})")]
    InvalidBase { s_base: f64, v_base: f64 },
    #[error("customer {customer} references unknown bus {bus}")]
    UnknownBus { customer: usize, bus: usize },
    #[error("customer {0} cannot attach to the source bus")]
    CustomerAtSource(usize),
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("network file: {0}")]
    Parse(String),
}

/// Per-unit system defined by an apparent-power base and a line voltage base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base: f64,
    pub v_base: f64,
}

impl PerUnitBase {
    pub fn new(s_base: f64, v_base: f64) -> Result<Self, NetworkError> {
        if !(s_base > 0.0 && v_base > 0.0) {
            return Err(NetworkError::InvalidBase { s_base, v_base });
        }
        Ok(Self { s_base, v_base })
    }

    /// Impedance base `V_base^2 / S_base`, ohm.
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn power_to_pu(&self, va: f64) -> f64 {
        va / self.s_base
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base
    }

    pub fn complex_power_to_pu(&self, va: Complex64) -> Complex64 {
        va / self.s_base
    }

    pub fn impedance_to_pu(&self, ohm: Complex64) -> Complex64 {
        ohm / self.z_base()
    }

    pub fn impedance_from_pu(&self, pu: Complex64) -> Complex64 {
        pu * self.z_base()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Customers served at this bus.
    pub attached_customers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series impedance, per-unit.
    pub impedance: Complex64,
    pub length_km: f64,
    /// Thermal rating in amperes. Informational only.
    pub ampacity_a: f64,
}

/// Radial network rooted at the source bus 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    /// Source voltage magnitude square, pu.
    pub v0: f64,
    /// Voltage magnitude-square band applied to every non-source bus, pu.
    pub v_min: f64,
    pub v_max: f64,
    pub s_base: f64,
    pub v_base: f64,
}

/// A broken network invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonConsecutiveBusIds { position: usize, id: usize },
    UnknownBusReference { line: usize, bus: usize },
    SelfLoop { line: usize, bus: usize },
    NegativeImpedance { line: usize },
    NotSpanningTree { lines: usize, buses: usize, reachable: usize },
    CustomerAtSource { customer: usize },
    DuplicateCustomer { customer: usize },
    VoltageBand { v_min: f64, v0: f64, v_max: f64 },
    InvalidBase,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonConsecutiveBusIds { position, id } => {
                write!(f, "bus ids not consecutive: position {position} holds id {id}")
            }
            Violation::UnknownBusReference { line, bus } => {
                write!(f, "line {line} references unknown bus {bus}")
            }
            Violation::SelfLoop { line, bus } => write!(f, "self-loop: line {line} at bus {bus}"),
            Violation::NegativeImpedance { line } => {
                write!(f, "line {line} has a negative impedance component")
            }
            Violation::NotSpanningTree {
                lines,
                buses,
                reachable,
            } => write!(
                f,
                "not spanning tree: {lines} lines, {buses} buses, {reachable} reachable from bus 0"
            ),
            Violation::CustomerAtSource { customer } => {
                write!(f, "customer {customer} attached to source bus 0")
            }
            Violation::DuplicateCustomer { customer } => {
                write!(f, "customer {customer} attached to more than one bus")
            }
            Violation::VoltageBand { v_min, v0, v_max } => write!(
                f,
                "voltage band violated: need 0 < v_min ({v_min}) <= v0 ({v0}) <= v_max ({v_max})"
            ),
            Violation::InvalidBase => write!(f, "per-unit bases must be positive"),
        }
    }
}

/// Builds the 4-bus path feeder (source bus 0, load buses 1..=3).
///
/// `capacity_va` is checked here but stored on the optimization instance,
/// not the network.
pub fn build_canadian_feeder(section_length_km: f64, capacity_va: f64) -> Result<Network, NetworkError> {
    if !(section_length_km > 0.0) || !section_length_km.is_finite() {
        return Err(NetworkError::NonPositiveLength(section_length_km));
    }
    if !(capacity_va > 0.0) || !capacity_va.is_finite() {
        return Err(NetworkError::NonPositiveCapacity(capacity_va));
    }
    let base = PerUnitBase::new(FEEDER_S_BASE_VA, FEEDER_V_BASE_V)?;
    let z_ohm = Complex64::new(FEEDER_R_OHM_PER_KM, FEEDER_X_OHM_PER_KM) * section_length_km;
    let lines = (0..3)
        .map(|i| Line {
            from_bus: i,
            to_bus: i + 1,
            impedance: base.impedance_to_pu(z_ohm),
            length_km: section_length_km,
            ampacity_a: FEEDER_AMPACITY_A,
        })
        .collect();
    Ok(Network {
        buses: (0..4)
            .map(|id| Bus {
                id,
                attached_customers: Vec::new(),
            })
            .collect(),
        lines,
        v0: 1.0,
        v_min: 0.95 * 0.95,
        v_max: 1.05 * 1.05,
        s_base: FEEDER_S_BASE_VA,
        v_base: FEEDER_V_BASE_V,
    })
}

impl Network {
    pub fn base(&self) -> PerUnitBase {
        PerUnitBase {
            s_base: self.s_base,
            v_base: self.v_base,
        }
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    /// Returns a copy with `attached_customers` rebuilt from a per-customer bus list.
    pub fn with_customers(&self, customer_buses: &[usize]) -> Result<Network, NetworkError> {
        let mut net = self.clone();
        for bus in &mut net.buses {
            bus.attached_customers.clear();
        }
        for (customer, &bus) in customer_buses.iter().enumerate() {
            if bus >= net.buses.len() {
                return Err(NetworkError::UnknownBus { customer, bus });
            }
            if bus == 0 {
                return Err(NetworkError::CustomerAtSource(customer));
            }
            net.buses[bus].attached_customers.push(customer);
        }
        Ok(net)
    }

    /// Line index feeding each bus (None for the source).
    pub fn parent_lines(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.buses.len()];
        for (idx, line) in self.lines.iter().enumerate() {
            if line.to_bus < parent.len() {
                parent[line.to_bus] = Some(idx);
            }
        }
        parent
    }

    /// Lines leaving each bus.
    pub fn child_lines(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.buses.len()];
        for (idx, line) in self.lines.iter().enumerate() {
            if line.from_bus < children.len() {
                children[line.from_bus].push(idx);
            }
        }
        children
    }

    /// Lines in breadth-first order from the source: every line appears after
    /// the line feeding its sending bus.
    pub fn lines_from_root(&self) -> Vec<usize> {
        let children = self.child_lines();
        let mut order = Vec::with_capacity(self.lines.len());
        let mut queue = VecDeque::from([0usize]);
        let mut seen = vec![false; self.buses.len()];
        while let Some(bus) = queue.pop_front() {
            if std::mem::replace(&mut seen[bus], true) {
                continue;
            }
            for &l in &children[bus] {
                order.push(l);
                queue.push_back(self.lines[l].to_bus);
            }
        }
        order
    }

    /// Depth-first visit order of buses reachable from the source.
    pub fn dfs_order(&self) -> Vec<usize> {
        let mut adjacency = vec![Vec::new(); self.buses.len()];
        for line in &self.lines {
            if line.from_bus == line.to_bus
                || line.from_bus >= self.buses.len()
                || line.to_bus >= self.buses.len()
            {
                continue;
            }
            adjacency[line.from_bus].push(line.to_bus);
            adjacency[line.to_bus].push(line.from_bus);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut order = Vec::new();
        let mut stack = vec![0usize];
        while let Some(bus) = stack.pop() {
            if bus >= seen.len() || std::mem::replace(&mut seen[bus], true) {
                continue;
            }
            order.push(bus);
            for &next in adjacency[bus].iter().rev() {
                if !seen[next] {
                    stack.push(next);
                }
            }
        }
        order
    }

    /// Lists every broken invariant. Empty means the network is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let nb = self.buses.len();
        if !(self.s_base > 0.0 && self.v_base > 0.0) {
            out.push(Violation::InvalidBase);
        }
        for (position, bus) in self.buses.iter().enumerate() {
            if bus.id != position {
                out.push(Violation::NonConsecutiveBusIds {
                    position,
                    id: bus.id,
                });
            }
        }
        let mut proper_lines = 0;
        for (idx, line) in self.lines.iter().enumerate() {
            for bus in [line.from_bus, line.to_bus] {
                if bus >= nb {
                    out.push(Violation::UnknownBusReference { line: idx, bus });
                }
            }
            if line.from_bus == line.to_bus {
                out.push(Violation::SelfLoop {
                    line: idx,
                    bus: line.from_bus,
                });
            } else {
                proper_lines += 1;
            }
            if line.impedance.re < 0.0 || line.impedance.im < 0.0 {
                out.push(Violation::NegativeImpedance { line: idx });
            }
        }
        // Self-loops are reported on their own and left out of the tree check.
        let reachable = self.dfs_order().len();
        if nb == 0 || proper_lines + 1 != nb || reachable != nb {
            out.push(Violation::NotSpanningTree {
                lines: proper_lines,
                buses: nb,
                reachable,
            });
        }
        let mut owner = Vec::<Option<usize>>::new();
        for bus in &self.buses {
            for &customer in &bus.attached_customers {
                if bus.id == 0 {
                    out.push(Violation::CustomerAtSource { customer });
                }
                if customer >= owner.len() {
                    owner.resize(customer + 1, None);
                }
                if owner[customer].replace(bus.id).is_some() {
                    out.push(Violation::DuplicateCustomer { customer });
                }
            }
        }
        if !(0.0 < self.v_min && self.v_min <= self.v0 && self.v0 <= self.v_max) {
            out.push(Violation::VoltageBand {
                v_min: self.v_min,
                v0: self.v0,
                v_max: self.v_max,
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), NetworkError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(NetworkError::Invalid(msg.join("; ")))
        }
    }

    pub fn to_file(&self) -> NetworkFile {
        let z_base = self.base().z_base();
        NetworkFile {
            buses: self.buses.iter().map(|b| b.id).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| {
                    let len = l.length_km;
                    let z_ohm = l.impedance * z_base;
                    LineRecord {
                        from: l.from_bus,
                        to: l.to_bus,
                        r_ohm_per_km: z_ohm.re / len,
                        x_ohm_per_km: z_ohm.im / len,
                        length_km: len,
                        ampacity_a: Some(l.ampacity_a),
                    }
                })
                .collect(),
            v0: self.v0.sqrt(),
            v_min_pu: self.v_min.sqrt(),
            v_max_pu: self.v_max.sqrt(),
            s_base_va: self.s_base,
            v_base_v: self.v_base,
        }
    }

    /// Serializes to the network description file format (TOML).
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("network file is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Network, NetworkError> {
        let file: NetworkFile =
            toml::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        file.into_network()
    }
}

/// On-disk network description. Voltages are magnitudes in pu, impedances in
/// ohm/km, powers in VA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub buses: Vec<usize>,
    pub v0: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub s_base_va: f64,
    pub v_base_v: f64,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub length_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_a: Option<f64>,
}

impl NetworkFile {
    pub fn into_network(self) -> Result<Network, NetworkError> {
        let base = PerUnitBase::new(self.s_base_va, self.v_base_v)?;
        let net = Network {
            buses: self
                .buses
                .iter()
                .map(|&id| Bus {
                    id,
                    attached_customers: Vec::new(),
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    from_bus: l.from,
                    to_bus: l.to,
                    impedance: base.impedance_to_pu(
                        Complex64::new(l.r_ohm_per_km, l.x_ohm_per_km) * l.length_km,
                    ),
                    length_km: l.length_km,
                    ampacity_a: l.ampacity_a.unwrap_or(0.0),
                })
                .collect(),
            v0: self.v0 * self.v0,
            v_min: self.v_min_pu * self.v_min_pu,
            v_max: self.v_max_pu * self.v_max_pu,
            s_base: self.s_base_va,
            v_base: self.v_base_v,
        };
        net.ensure_valid()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feeder() -> Network {
        build_canadian_feeder(1.0, 4e6).unwrap()
    }

    #[test]
    fn one_km_section_per_unit_impedance() {
        let net = feeder();
        // Z_base = 12470^2 / 8.7e6 = 17.87367... ohm
        let z_base = 12470.0_f64 * 12470.0 / 8.7e6;
        assert!((z_base - 17.873_666_7).abs() < 1e-6);
        let z = net.lines[0].impedance;
        assert!((z.re - 0.008_554_5).abs() < 1e-6, "{}", z.re);
        assert!((z.im - 0.007_866_3).abs() < 1e-6, "{}", z.im);
        assert!((z.re - 0.1529 / z_base).abs() < 1e-15);
    }

    #[test]
    fn feeder_shape() {
        let net = feeder();
        assert_eq!(net.buses.len(), 4);
        assert_eq!(net.lines.len(), 3);
        assert!(net.validate().is_empty());
        assert_eq!(net.dfs_order(), vec![0, 1, 2, 3]);
        assert_eq!(net.v0, 1.0);
        assert!((net.v_min - 0.9025).abs() < 1e-15);
        assert!((net.v_max - 1.1025).abs() < 1e-15);
    }

    #[test]
    fn zero_length_rejected() {
        assert_eq!(
            build_canadian_feeder(0.0, 4e6),
            Err(NetworkError::NonPositiveLength(0.0))
        );
        assert!(build_canadian_feeder(1.0, 0.0).is_err());
        assert!(build_canadian_feeder(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn per_unit_examples() {
        let base = feeder().base();
        assert_eq!(base.power_to_pu(8.7e6), 1.0);
        assert!((base.power_to_pu(4e6) - 0.459_77).abs() < 1e-5);
        assert_eq!(base.power_to_pu(0.0), 0.0);
        let z = Complex64::new(0.3, 0.2);
        let back = base.impedance_from_pu(base.impedance_to_pu(z));
        assert!((back - z).norm() / z.norm() < 1e-12);
    }

    #[test]
    fn self_loop_reported_alone() {
        let mut net = feeder();
        let mut extra = net.lines[0].clone();
        extra.from_bus = 1;
        extra.to_bus = 1;
        net.lines.push(extra);
        let v = net.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].to_string().contains("self-loop"));
    }

    #[test]
    fn missing_line_is_not_a_tree() {
        let mut net = feeder();
        net.lines.pop();
        let v = net.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("not spanning tree"));
    }

    #[test]
    fn customer_attachment_rules() {
        let net = feeder();
        let attached = net.with_customers(&[1, 3, 3]).unwrap();
        assert_eq!(attached.buses[3].attached_customers, vec![1, 2]);
        assert!(attached.validate().is_empty());
        assert_eq!(
            net.with_customers(&[0]),
            Err(NetworkError::CustomerAtSource(0))
        );
        assert!(net.with_customers(&[7]).is_err());

        let mut dup = attached.clone();
        dup.buses[2].attached_customers.push(0);
        assert!(dup
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::DuplicateCustomer { customer: 0 })));
    }

    #[test]
    fn voltage_band_checked() {
        let mut net = feeder();
        net.v_min = 1.2;
        assert!(matches!(net.validate()[0], Violation::VoltageBand { .. }));
    }

    #[test]
    fn file_round_trip() {
        let net = feeder();
        let text = net.to_toml();
        assert!(text.contains("r_ohm_per_km"));
        let back = Network::from_toml(&text).unwrap();
        assert_eq!(back.lines.len(), 3);
        for (a, b) in back.lines.iter().zip(&net.lines) {
            assert!((a.impedance - b.impedance).norm() < 1e-15);
        }
        assert!((back.v_min - net.v_min).abs() < 1e-15);
    }

    #[test]
    fn malformed_file_rejected() {
        let bad = "buses = [0, 1]\nv0 = 1.0\nv_min_pu = 0.95\nv_max_pu = 1.05\n\
                   s_base_va = 1.0\nv_base_v = 1.0\nlines = []\n";
        assert!(matches!(
            Network::from_toml(bad),
            Err(NetworkError::Invalid(_))
        ));
        assert!(matches!(
            Network::from_toml("not toml ["),
            Err(NetworkError::Parse(_))
        ));
    }
}
