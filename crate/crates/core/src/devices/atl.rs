use serde::{Deserialize, Serialize};

use super::protection::{ProtectionMonitor, ProtectionSettings, Status};
use crate::error::{Error, Result};

/// Active thermal load parameters, p.u. on the unit rating `S_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlParams {
    pub tau_pll: f64,
    pub tau_p: f64,
    pub h: f64,
    pub b: f64,
    pub r_t: f64,
    pub l_t: f64,
    pub r_a: f64,
    pub load_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AtlState {
    /// PLL frequency estimate, p.u.
    pub f_pll: f64,
    /// Filtered power command, p.u.
    pub p_filt: f64,
    /// Compressor motor speed, p.u.
    pub speed: f64,
}

impl AtlState {
    pub const LEN: usize = 3;

    pub fn read(x: &[f64]) -> Self {
        Self { f_pll: x[0], p_filt: x[1], speed: x[2] }
    }

    pub fn write(&self, x: &mut [f64]) {
        x[..3].copy_from_slice(&[self.f_pll, self.p_filt, self.speed]);
    }
}

/// Three-state surrogate of an inverter-driven compressor load: PLL lag on
/// the bus frequency, power command shaped by the under-frequency droop and
/// a first-order lag, and the motor swing with quadratic compressor torque.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveThermalLoad {
    pub params: AtlParams,
    pub rating_mva: f64,
    pub f_n: f64,
    /// Compressor torque coefficient.
    pub k_c: f64,
    /// Pre-disturbance power command.
    pub p_ref: f64,
    /// Input current magnitude squared at the operating point.
    i0_sq: f64,
}

impl ActiveThermalLoad {
    pub fn new(params: AtlParams, rating_mva: f64, f_n: f64) -> Result<Self> {
        let p = &params;
        if [p.tau_pll, p.tau_p, p.h, p.load_factor, rating_mva, f_n]
            .iter()
            .any(|v| !(*v > 0.0))
            || [p.b, p.r_t, p.l_t, p.r_a].iter().any(|v| *v < 0.0)
        {
            return Err(Error::InvalidParameter(
                "thermal load parameters out of range".into(),
            ));
        }
        Ok(Self { params, rating_mva, f_n, k_c: 0.0, p_ref: 0.0, i0_sq: 0.0 })
    }

    /// Input power for a command `p_filt` at speed `speed` and voltage `vm`:
    /// the root of `P = P_f + r_a tau^2 + r_t P^2 / v^2`.
    pub fn input_power(&self, p_filt: f64, speed: f64, vm: f64) -> f64 {
        let tau = p_filt / speed;
        let c = p_filt + self.params.r_a * tau * tau;
        let a = self.params.r_t / (vm * vm);
        if a == 0.0 {
            return c;
        }
        let disc = (1.0 - 4.0 * a * c).max(0.0);
        2.0 * c / (1.0 + disc.sqrt())
    }

    /// Drawn `(P, Q)` in unit p.u.
    pub fn power(&self, state: &AtlState, vm: f64) -> (f64, f64) {
        let p = self.input_power(state.p_filt, state.speed, vm);
        let i_sq = (p / vm).powi(2);
        (p, self.params.l_t * (i_sq - self.i0_sq))
    }

    /// Sets the command and compressor torque so the unit draws
    /// `load_factor` p.u. at voltage `vm`, nominal frequency and unit speed.
    pub fn initialize(&mut self, vm: f64) -> Result<AtlState> {
        let p = &self.params;
        let target = p.load_factor;
        let c = target - p.r_t * target * target / (vm * vm);
        let p_filt = if p.r_a > 0.0 {
            (-1.0 + (1.0 + 4.0 * p.r_a * c).sqrt()) / (2.0 * p.r_a)
        } else {
            c
        };
        if !(p_filt > 0.0) || 4.0 * p.r_t / (vm * vm) * (p_filt + p.r_a * p_filt * p_filt) > 1.0 {
            return Err(Error::Equilibrium {
                device: "active thermal load".into(),
                reason: format!("no operating point for load factor {target:.3} at v = {vm:.4}"),
            });
        }
        self.p_ref = p_filt;
        self.k_c = p_filt - p.b;
        self.i0_sq = (target / vm).powi(2);
        Ok(AtlState { f_pll: 1.0, p_filt, speed: 1.0 })
    }

    /// Electrical torque minus friction and compressor torque.
    pub fn accelerating_torque(&self, p_filt: f64, speed: f64) -> f64 {
        p_filt / speed - self.params.b * speed - self.k_c * speed * speed
    }

    /// `f` is the bus frequency in p.u.
    pub fn derivatives(&self, state: &AtlState, f: f64, settings: &ProtectionSettings) -> AtlState {
        let p = &self.params;
        let shed = settings.under_frequency_shedding(state.f_pll * self.f_n);
        AtlState {
            f_pll: (f - state.f_pll) / p.tau_pll,
            p_filt: (self.p_ref * shed - state.p_filt) / p.tau_p,
            speed: self.accelerating_torque(state.p_filt, state.speed) / (2.0 * p.h),
        }
    }

    /// Advances the unit over `dt` with bus voltage magnitude `vm` and
    /// frequency `f` (p.u.) held constant; returns the drawn power at the end
    /// of the interval, zero once protection has tripped.
    pub fn step(
        &self,
        state: &AtlState,
        monitor: &mut ProtectionMonitor,
        vm: f64,
        f: f64,
        dt: f64,
        settings: &ProtectionSettings,
    ) -> (AtlState, (f64, f64)) {
        if monitor.update(vm, state.f_pll * self.f_n, dt, settings) == Status::Tripped {
            return (*state, (0.0, 0.0));
        }
        let next = rk4(state, dt, |x| self.derivatives(x, f, settings));
        (next, self.power(&next, vm))
    }
}

fn rk4(x: &AtlState, dt: f64, f: impl Fn(&AtlState) -> AtlState) -> AtlState {
    let add = |a: &AtlState, b: &AtlState, h: f64| AtlState {
        f_pll: a.f_pll + h * b.f_pll,
        p_filt: a.p_filt + h * b.p_filt,
        speed: a.speed + h * b.speed,
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, dt / 2.0));
    let k3 = f(&add(x, &k2, dt / 2.0));
    let k4 = f(&add(x, &k3, dt));
    AtlState {
        f_pll: x.f_pll + dt / 6.0 * (k1.f_pll + 2.0 * k2.f_pll + 2.0 * k3.f_pll + k4.f_pll),
        p_filt: x.p_filt + dt / 6.0 * (k1.p_filt + 2.0 * k2.p_filt + 2.0 * k3.p_filt + k4.p_filt),
        speed: x.speed + dt / 6.0 * (k1.speed + 2.0 * k2.speed + 2.0 * k3.speed + k4.speed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ActiveThermalLoad {
        let params = AtlParams {
            tau_pll: 0.07,
            tau_p: 0.02,
            h: 0.2,
            b: 0.001,
            r_t: 0.03,
            l_t: 0.5,
            r_a: 0.05,
            load_factor: 0.8,
        };
        ActiveThermalLoad::new(params, 0.01, 50.0).unwrap()
    }

    #[test]
    fn equilibrium_draws_initial_share() {
        let mut atl = unit();
        let x = atl.initialize(0.98).unwrap();
        let (p, q) = atl.power(&x, 0.98);
        assert!((p - 0.8).abs() < 1e-12);
        assert!(q.abs() < 1e-12);
        let d = atl.derivatives(&x, 1.0, &ProtectionSettings::default());
        assert!(d.f_pll.abs() < 1e-14 && d.p_filt.abs() < 1e-14 && d.speed.abs() < 1e-14);
    }

    #[test]
    fn equilibrium_speed_is_torque_balance_root() {
        let mut atl = unit();
        let x = atl.initialize(1.0).unwrap();
        // Bisection on tau_e(w) = b w + k_c w^2 with tau_e = P_f / w.
        let g = |w: f64| x.p_filt / w - atl.params.b * w - atl.k_c * w * w;
        let (mut lo, mut hi) = (0.1, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - x.speed).abs() < 1e-12);
    }

    #[test]
    fn steady_operation_is_constant() {
        let mut atl = unit();
        let s = ProtectionSettings::default();
        let mut x = atl.initialize(1.0).unwrap();
        let mut mon = ProtectionMonitor::new(&s);
        for _ in 0..500 {
            let (next, (p, _)) = atl.step(&x, &mut mon, 1.0, 1.0, 0.01, &s);
            assert!((p - 0.8).abs() < 1e-9);
            x = next;
        }
    }

    #[test]
    fn under_frequency_reduces_command() {
        let mut atl = unit();
        let s = ProtectionSettings::default();
        let mut x = atl.initialize(1.0).unwrap();
        let p0 = x.p_filt;
        let mut mon = ProtectionMonitor::new(&s);
        let f = 49.0 / 50.0;
        for _ in 0..200 {
            x = atl.step(&x, &mut mon, 1.0, f, 0.01, &s).0;
        }
        assert!(x.p_filt < p0);
        assert!(!mon.is_tripped());
    }

    #[test]
    fn sustained_under_voltage_trips_and_latches() {
        let mut atl = unit();
        let s = ProtectionSettings::default();
        let mut x = atl.initialize(1.0).unwrap();
        let mut mon = ProtectionMonitor::new(&s);
        let mut out = (1.0, 1.0);
        for _ in 0..300 {
            let r = atl.step(&x, &mut mon, 0.75, 1.0, 0.01, &s);
            x = r.0;
            out = r.1;
        }
        assert!(mon.is_tripped());
        assert_eq!(out, (0.0, 0.0));
        let (_, after) = atl.step(&x, &mut mon, 1.0, 1.0, 0.01, &s);
        assert_eq!(after, (0.0, 0.0));
    }
}
