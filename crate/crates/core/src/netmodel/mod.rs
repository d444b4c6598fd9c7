//! Static network representation: buses, Π-model branches, admittance
//! assembly, Newton-Raphson power flow and the PCC-aligned current frame.

mod admittance;
mod frame;
mod powerflow;

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use frame::interface_current;
pub use powerflow::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};

pub use num_complex::Complex64;

/// The CIGRE European LV residential feeder shipped with the crate.
pub const CIGRE_LV_RESIDENTIAL: &str = include_str!("../../data/cigre_lv_residential.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub kind: BusKind,
    /// Voltage base of the bus in kV (all quantities are p.u. on it).
    pub nominal_voltage: f64,
    /// Voltage magnitude setpoint, used by the slack bus only.
    #[serde(default = "unity")]
    pub v_setpoint: f64,
    /// Initial nodal consumption in kW (static + thermal + motor load).
    #[serde(default)]
    pub initial_load_kw: f64,
    /// Initial inverter-based generation in kW.
    #[serde(default)]
    pub initial_generation_kw: f64,
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series resistance, p.u. on the system base.
    pub r: f64,
    /// Series reactance, p.u. on the system base.
    pub x: f64,
    /// Total shunt susceptance, split equally over both terminals.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal turns ratio at the `from` side.
    #[serde(default = "unity")]
    pub tap: f64,
}

impl Branch {
    pub fn series_admittance(&self) -> Result<Complex64> {
        if self.r == 0.0 && self.x == 0.0 {
            return Err(Error::ZeroImpedance {
                from: self.from,
                to: self.to,
            });
        }
        Ok(Complex64::new(self.r, self.x).inv())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub f_n: f64,
    /// Bus at which the feeder meets the transmission network.
    pub pcc_bus: u32,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl NetworkModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let network: NetworkModel = serde_json::from_str(text)?;
        network.validate()?;
        Ok(network)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn cigre_lv_residential() -> Self {
        Self::from_json(CIGRE_LV_RESIDENTIAL).expect("bundled network data is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::InvalidNetwork("no buses".into()));
        }
        if !(self.base_mva > 0.0) || !(self.f_n > 0.0) {
            return Err(Error::InvalidNetwork(
                "base power and nominal frequency must be positive".into(),
            ));
        }
        let mut seen = HashMap::new();
        for (k, bus) in self.buses.iter().enumerate() {
            if seen.insert(bus.id, k).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate bus id {}", bus.id)));
            }
            if bus.initial_load_kw < 0.0 || bus.initial_generation_kw < 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "bus {} has negative load or generation",
                    bus.id
                )));
            }
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::InvalidNetwork(format!(
                "expected exactly one slack bus, found {slack}"
            )));
        }
        if !seen.contains_key(&self.pcc_bus) {
            return Err(Error::InvalidNetwork(format!("unknown PCC bus {}", self.pcc_bus)));
        }
        let mut adjacency = vec![Vec::new(); self.buses.len()];
        for br in &self.branches {
            let (Some(&a), Some(&b)) = (seen.get(&br.from), seen.get(&br.to)) else {
                return Err(Error::InvalidNetwork(format!(
                    "branch {}-{} references an unknown bus",
                    br.from, br.to
                )));
            };
            br.series_admittance()?;
            if !(br.tap > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "branch {}-{} has non-positive tap",
                    br.from, br.to
                )));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut visited = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(k) = queue.pop_front() {
            for &n in &adjacency[k] {
                if !visited[n] {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if let Some(k) = visited.iter().position(|v| !v) {
            return Err(Error::InvalidNetwork(format!(
                "bus {} is not connected",
                self.buses[k].id
            )));
        }
        Ok(())
    }

    /// Position of bus `id` in `buses`.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    pub fn pcc_index(&self) -> usize {
        self.index_of(self.pcc_bus).expect("validated network has a PCC")
    }

    /// Current flowing out of `bus_index` through every branch incident to
    /// it, using the Π-model terminal equations.
    pub fn current_leaving(&self, bus_index: usize, voltages: &[Complex64]) -> Result<Complex64> {
        let id = self.buses[bus_index].id;
        let mut total = Complex64::new(0.0, 0.0);
        for br in &self.branches {
            let y = br.series_admittance()?;
            let shunt = Complex64::new(0.0, br.b / 2.0);
            let f = self.index_of(br.from).expect("validated");
            let t = self.index_of(br.to).expect("validated");
            if br.from == id {
                total += (voltages[f] / br.tap - voltages[t]) * y / br.tap
                    + voltages[f] * shunt / (br.tap * br.tap);
            } else if br.to == id {
                total += (voltages[t] - voltages[f] / br.tap) * y + voltages[t] * shunt;
            }
        }
        Ok(total)
    }

    /// Scales every nodal load by `factor`.
    pub fn scale_loads(&mut self, factor: f64) {
        for bus in &mut self.buses {
            bus.initial_load_kw *= factor;
        }
    }

    pub fn total_load_kw(&self) -> f64 {
        self.buses.iter().map(|b| b.initial_load_kw).sum()
    }

    pub fn total_generation_kw(&self) -> f64 {
        self.buses.iter().map(|b| b.initial_generation_kw).sum()
    }

    /// kW expressed in p.u. of the system base.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.base_mva * 1000.0)
    }
}
