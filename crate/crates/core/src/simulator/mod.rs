//! Time-domain simulation of the feeder coupled to the TN equivalent:
//! initialization, adaptive trapezoidal integration, the TN load-step event,
//! protection checks at step boundaries and trajectory recording.

mod integrator;
mod system;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::devices::{ProtectionMonitor, Status};
use crate::error::{Error, Result};

pub use integrator::{IntegratorStats, OdeSystem, StepControl, Trapezoidal};
pub use system::{
    extend_with_tn, initial_jacobian, Discrete, DynamicSystem, MachineSpec, Plant, SystemSpec,
    TrippableKind,
};
pub use trajectory::{Trajectory, TrajectoryMeta, TripRecord, TRAJECTORY_SCHEMA};

/// The ten standard load steps, kW.
pub const STANDARD_STEPS_KW: [f64; 10] =
    [-225.0, -175.0, -125.0, -75.0, -25.0, 25.0, 75.0, 125.0, 175.0, 225.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TnStrength {
    Strong,
    Weak,
}

impl FromStr for TnStrength {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(TnStrength::Strong),
            "weak" => Ok(TnStrength::Weak),
            other => Err(Error::InvalidParameter(format!("unknown TN profile '{other}'"))),
        }
    }
}

impl fmt::Display for TnStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TnStrength::Strong => "strong",
            TnStrength::Weak => "weak",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnProfile {
    pub name: String,
    pub short_circuit_mva: f64,
    /// Inertia constant of the equivalent machine, s.
    pub inertia_s: f64,
}

impl TnProfile {
    pub fn custom(name: impl Into<String>, short_circuit_mva: f64, inertia_s: f64) -> Result<Self> {
        if !(short_circuit_mva > 0.0) || !(inertia_s > 0.0) {
            return Err(Error::InvalidParameter(
                "TN short-circuit power and inertia must be positive".into(),
            ));
        }
        Ok(Self { name: name.into(), short_circuit_mva, inertia_s })
    }
}

pub fn tn_profile(strength: TnStrength) -> TnProfile {
    match strength {
        TnStrength::Strong => TnProfile { name: "strong".into(), short_circuit_mva: 150.0, inertia_s: 6.0 },
        TnStrength::Weak => TnProfile { name: "weak".into(), short_circuit_mva: 75.0, inertia_s: 1.5 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub t_end: f64,
    pub event_time: f64,
    /// Constant-power load step at the TN bus, kW (positive = more load).
    pub step_kw: f64,
    pub tolerance: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { t_end: 12.0, event_time: 2.0, step_kw: 0.0, tolerance: 1e-6, h_min: 1e-3, h_max: 0.05 }
    }
}

impl SimulationConfig {
    pub fn with_step(step_kw: f64) -> Self {
        Self { step_kw, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.event_time && self.event_time < self.t_end) {
            return Err(Error::InvalidParameter("event time must lie inside (0, t_end)".into()));
        }
        if !(self.tolerance > 0.0 && 0.0 < self.h_min && self.h_min <= self.h_max) {
            return Err(Error::InvalidParameter("invalid step-size control".into()));
        }
        Ok(())
    }

    fn control(&self) -> StepControl {
        StepControl { tolerance: self.tolerance, h_min: self.h_min, h_max: self.h_max }
    }
}

/// Integrates the initialized system over `[0, t_end]`, applying the load step
/// at the event time.
pub fn run(config: &SimulationConfig, system: &DynamicSystem, tn_name: &str) -> Result<Trajectory> {
    config.validate()?;
    let mut plant = Plant::new(system);
    let x0 = system.initial_state().to_vec();
    let mut integ = Trapezoidal::new(&mut plant, &x0, config.control())?;
    let mut traj = Trajectory::new(TrajectoryMeta {
        schema: TRAJECTORY_SCHEMA,
        step_kw: config.step_kw,
        set_id: None,
        tn_profile: tn_name.to_string(),
        event_time: config.event_time,
        t_end: config.t_end,
        f_n: system.f_n,
        trips: vec![],
        accepted_steps: 0,
        rejected_steps: 0,
    });
    let record = |traj: &mut Trajectory, t: f64, x: &[f64], v: &[_]| -> Result<()> {
        let (vm, w, ip, iq) = system.measurements(x, v)?;
        traj.push(t, vm, w, ip, iq);
        Ok(())
    };
    record(&mut traj, 0.0, &x0, system.initial_voltages())?;

    let units = system.trippable();
    let mut monitors: Vec<ProtectionMonitor> =
        units.iter().map(|_| ProtectionMonitor::new(&system.protection)).collect();
    let step_pu = config.step_kw / (system.base_mva * 1000.0);
    let abort = |t: f64, e: Error| match e {
        Error::IntegrationAborted { reason, .. } => Error::IntegrationAborted { time: t, reason },
        other => other,
    };

    let mut t = 0.0;
    let mut event_done = false;
    while t < config.t_end - 1e-9 {
        let limit = if event_done { config.t_end - t } else { config.event_time - t };
        if !event_done && limit <= 1e-9 {
            plant.discrete.load_step = step_pu;
            integ.restart(&mut plant).map_err(|e| abort(t, e))?;
            event_done = true;
            continue;
        }
        let h = integ.step(&mut plant, limit).map_err(|e| abort(t, e))?;
        t += h;
        if !event_done && (config.event_time - t).abs() < 1e-9 {
            t = config.event_time;
        }
        let x = integ.state().to_vec();
        system
            .solve_network(&x, &plant.discrete, &mut plant.voltages)
            .map_err(|e| abort(t, e))?;
        let mut tripped = false;
        for ((idx, kind, bus, offset), monitor) in units.iter().zip(&mut monitors) {
            let already = match kind {
                TrippableKind::ThermalLoad => plant.discrete.atl_tripped[*idx],
                TrippableKind::Generation => plant.discrete.ibg_tripped[*idx],
            };
            if already {
                continue;
            }
            let vm = plant.voltages[*bus].norm();
            let f_hz = x[*offset] * system.f_n;
            if monitor.update(vm, f_hz, h, &system.protection) == Status::Tripped {
                match kind {
                    TrippableKind::ThermalLoad => plant.discrete.atl_tripped[*idx] = true,
                    TrippableKind::Generation => plant.discrete.ibg_tripped[*idx] = true,
                }
                traj.meta.trips.push(TripRecord {
                    time: t,
                    bus: system.bus_name(*bus).to_string(),
                    device: *kind,
                });
                tripped = true;
            }
        }
        record(&mut traj, t, &x, &plant.voltages)?;
        if tripped {
            integ.restart(&mut plant).map_err(|e| abort(t, e))?;
        }
    }
    traj.meta.accepted_steps = integ.stats.accepted;
    traj.meta.rejected_steps = integ.stats.rejected;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        let s = tn_profile(TnStrength::Strong);
        assert_eq!((s.short_circuit_mva, s.inertia_s), (150.0, 6.0));
        let w = tn_profile(TnStrength::Weak);
        assert_eq!((w.short_circuit_mva, w.inertia_s), (75.0, 1.5));
        assert!(TnProfile::custom("x", 0.0, 1.0).is_err());
        assert!(TnProfile::custom("x", 10.0, -1.0).is_err());
        assert_eq!("weak".parse::<TnStrength>().unwrap(), TnStrength::Weak);
        assert!("medium".parse::<TnStrength>().is_err());
    }

    #[test]
    fn standard_steps_are_symmetric() {
        assert_eq!(STANDARD_STEPS_KW.len(), 10);
        for s in STANDARD_STEPS_KW {
            assert!(STANDARD_STEPS_KW.contains(&-s));
            assert!(s.abs() <= 225.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig::default().validate().is_ok());
        let bad = SimulationConfig { event_time: 13.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
