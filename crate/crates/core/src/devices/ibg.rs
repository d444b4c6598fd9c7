use serde::{Deserialize, Serialize};

use super::protection::{ProtectionMonitor, ProtectionSettings, Status};
use crate::error::{Error, Result};
use crate::netmodel::Complex64;

/// Inverter-based generation parameters, p.u. on the unit rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbgParams {
    pub tau_pll: f64,
    pub tau_i: f64,
    /// Bound on `|di_p/dt|`, p.u./s.
    pub ramp: f64,
    pub i_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IbgState {
    pub f_pll: f64,
    pub i_p: f64,
    /// Reactive current, positive for capacitive injection.
    pub i_q: f64,
}

impl IbgState {
    pub const LEN: usize = 3;

    pub fn read(x: &[f64]) -> Self {
        Self { f_pll: x[0], i_p: x[1], i_q: x[2] }
    }

    pub fn write(&self, x: &mut [f64]) {
        x[..3].copy_from_slice(&[self.f_pll, self.i_p, self.i_q]);
    }
}

/// Current-controlled inverter: first-order current tracking with a ramp
/// limit on the active channel, frequency-watt curtailment, volt-var support
/// and reactive-priority current limiting.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterGeneration {
    pub params: IbgParams,
    pub rating_mva: f64,
    pub f_n: f64,
    /// Available active power, p.u. of the rating.
    pub p_avail: f64,
    /// Pre-disturbance voltage magnitude (volt-var reference).
    pub v0: f64,
}

impl InverterGeneration {
    pub fn new(params: IbgParams, rating_mva: f64, f_n: f64) -> Result<Self> {
        let p = &params;
        if [p.tau_pll, p.tau_i, p.ramp, p.i_max, rating_mva, f_n]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::InvalidParameter(
                "generation parameters must be positive".into(),
            ));
        }
        Ok(Self { params, rating_mva, f_n, p_avail: 1.0, v0: 1.0 })
    }

    pub fn initialize(&mut self, vm: f64) -> Result<IbgState> {
        let i_p = self.p_avail / vm;
        if i_p > self.params.i_max {
            return Err(Error::Equilibrium {
                device: "inverter-based generation".into(),
                reason: format!("rated output needs {i_p:.3} p.u. current above the limit"),
            });
        }
        self.v0 = vm;
        Ok(IbgState { f_pll: 1.0, i_p, i_q: 0.0 })
    }

    fn reactive_reference(&self, vm: f64, settings: &ProtectionSettings) -> f64 {
        let i_max = self.params.i_max;
        settings.reactive_support(vm - self.v0).clamp(-i_max, i_max)
    }

    fn active_reference(&self, state: &IbgState, vm: f64, iq_ref: f64, settings: &ProtectionSettings) -> f64 {
        let room = (self.params.i_max.powi(2) - iq_ref * iq_ref).max(0.0).sqrt();
        let p = self.p_avail * settings.frequency_watt(state.f_pll * self.f_n);
        (p / vm).min(room)
    }

    pub fn derivatives(&self, state: &IbgState, vm: f64, f: f64, settings: &ProtectionSettings) -> IbgState {
        let p = &self.params;
        let iq_ref = self.reactive_reference(vm, settings);
        let ip_ref = self.active_reference(state, vm, iq_ref, settings);
        IbgState {
            f_pll: (f - state.f_pll) / p.tau_pll,
            i_p: ((ip_ref - state.i_p) / p.tau_i).clamp(-p.ramp, p.ramp),
            i_q: (iq_ref - state.i_q) / p.tau_i,
        }
    }

    /// Output currents after reactive-priority limiting; `|i| <= i_max`.
    pub fn output_currents(&self, state: &IbgState) -> (f64, f64) {
        let i_max = self.params.i_max;
        let i_q = state.i_q.clamp(-i_max, i_max);
        let room = (i_max * i_max - i_q * i_q).max(0.0).sqrt();
        (state.i_p.clamp(0.0, room), i_q)
    }

    /// Injected current phasor (unit base) for bus voltage `v`.
    pub fn injection(&self, state: &IbgState, v: Complex64) -> Complex64 {
        let (i_p, i_q) = self.output_currents(state);
        let unit = v / v.norm();
        Complex64::new(i_p, -i_q) * unit
    }

    /// Injected `(P, Q)` in unit p.u.
    pub fn power(&self, state: &IbgState, vm: f64) -> (f64, f64) {
        let (i_p, i_q) = self.output_currents(state);
        (vm * i_p, vm * i_q)
    }

    /// Advances the unit over `dt` with inputs held; zero output once tripped.
    pub fn step(
        &self,
        state: &IbgState,
        monitor: &mut ProtectionMonitor,
        vm: f64,
        f: f64,
        dt: f64,
        settings: &ProtectionSettings,
    ) -> (IbgState, (f64, f64)) {
        if monitor.update(vm, state.f_pll * self.f_n, dt, settings) == Status::Tripped {
            return (*state, (0.0, 0.0));
        }
        let n = (dt / 1e-3).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let mut x = *state;
        for _ in 0..n {
            let d = self.derivatives(&x, vm, f, settings);
            x.f_pll += h * d.f_pll;
            x.i_p += h * d.i_p;
            x.i_q += h * d.i_q;
        }
        (x, self.power(&x, vm))
    }
}
