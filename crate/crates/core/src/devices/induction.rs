use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Complex64;

/// Third-order induction machine parameters, p.u. on the machine rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImParams {
    pub r_s: f64,
    pub r_r: f64,
    pub l_m: f64,
    pub l_s: f64,
    pub l_r: f64,
    pub h: f64,
    pub load_factor: f64,
    pub power_factor: f64,
}

/// Transient EMF in the network frame (p.u.) and slip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImState {
    pub e_re: f64,
    pub e_im: f64,
    pub slip: f64,
}

impl ImState {
    pub const LEN: usize = 3;

    pub fn emf(&self) -> Complex64 {
        Complex64::new(self.e_re, self.e_im)
    }

    pub fn read(x: &[f64]) -> Self {
        Self { e_re: x[0], e_im: x[1], slip: x[2] }
    }

    pub fn write(&self, x: &mut [f64]) {
        x[..3].copy_from_slice(&[self.e_re, self.e_im, self.slip]);
    }
}

/// Induction motor with a quadratic load torque, referred to its own rating
/// `rating_mva`. Terminal quantities are p.u. voltage and machine-base current
/// drawn from the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct InductionMachine {
    pub params: ImParams,
    pub rating_mva: f64,
    omega_b: f64,
    x0: f64,
    x_tr: f64,
    t0: f64,
    /// Mechanical load torque at standstill; `T_m = load_torque (1 - s)^2`.
    pub load_torque: f64,
    /// Terminal capacitor susceptance (machine base) for power-factor correction.
    pub capacitor: f64,
}

impl InductionMachine {
    pub fn new(params: ImParams, rating_mva: f64, f_n: f64) -> Result<Self> {
        let p = &params;
        let positive = [p.r_s, p.r_r, p.l_m, p.l_s, p.l_r, p.h, p.load_factor, rating_mva, f_n];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(
                "induction machine parameters must be positive".into(),
            ));
        }
        let omega_b = 2.0 * PI * f_n;
        Ok(Self {
            params,
            rating_mva,
            omega_b,
            x0: p.l_s + p.l_m,
            x_tr: p.l_s + p.l_m * p.l_r / (p.l_m + p.l_r),
            t0: (p.l_r + p.l_m) / (omega_b * p.r_r),
            load_torque: 0.0,
            capacitor: 0.0,
        })
    }

    /// Stator impedance behind the transient EMF.
    pub fn stator_impedance(&self) -> Complex64 {
        Complex64::new(self.params.r_s, self.x_tr)
    }

    /// Steady-state input impedance at slip `s`.
    pub fn steady_impedance(&self, s: f64) -> Complex64 {
        let sigma = self.omega_b * s * self.t0;
        let j = Complex64::i();
        self.stator_impedance() + j * (self.x0 - self.x_tr) / (1.0 + j * sigma)
    }

    /// Current drawn from the bus.
    pub fn current(&self, state: &ImState, v: Complex64) -> Complex64 {
        (v - state.emf()) / self.stator_impedance()
    }

    pub fn electrical_torque(&self, state: &ImState, current: Complex64) -> f64 {
        (state.emf() * current.conj()).re
    }

    pub fn mechanical_torque(&self, slip: f64) -> f64 {
        self.load_torque * (1.0 - slip).powi(2)
    }

    /// State derivative and stator current for terminal voltage `v`.
    pub fn derivatives(&self, state: &ImState, v: Complex64) -> (ImState, Complex64) {
        self.derivatives_in_frame(state, v, 1.0)
    }

    /// As [`derivatives`](Self::derivatives), with phasors expressed in a
    /// reference frame rotating at `frame_speed` (p.u.).
    pub fn derivatives_in_frame(&self, state: &ImState, v: Complex64, frame_speed: f64) -> (ImState, Complex64) {
        let i = self.current(state, v);
        let e = state.emf();
        let j = Complex64::i();
        let de = -j * self.omega_b * (state.slip + frame_speed - 1.0) * e - (e - j * (self.x0 - self.x_tr) * i) / self.t0;
        let ds = (self.mechanical_torque(state.slip) - self.electrical_torque(state, i))
            / (2.0 * self.params.h);
        (ImState { e_re: de.re, e_im: de.im, slip: ds }, i)
    }

    /// Slip at which the machine draws `p` (machine base) at voltage magnitude
    /// `vm`, on the stable side of the torque characteristic.
    pub fn slip_for_power(&self, p: f64, vm: f64) -> Result<f64> {
        let power = |s: f64| vm * vm * self.steady_impedance(s).inv().re;
        // Locate the peak of the power-slip curve by golden-section search.
        let (mut a, mut b) = (0.0, 1.0);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if power(c) > power(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let s_peak = 0.5 * (a + b);
        if power(s_peak) < p {
            return Err(Error::Equilibrium {
                device: "induction machine".into(),
                reason: format!(
                    "load {p:.4} p.u. exceeds the peak power {:.4} p.u. at v = {vm:.4}",
                    power(s_peak)
                ),
            });
        }
        let (mut lo, mut hi) = (0.0, s_peak);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if power(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Places the machine at the operating point drawing `load_factor` p.u.
    /// active power at bus voltage `v`; sets the load torque and the
    /// capacitor that brings the unit to the sampled power factor.
    pub fn initialize(&mut self, v: Complex64) -> Result<ImState> {
        let vm = v.norm();
        let p = self.params.load_factor;
        let s = self.slip_for_power(p, vm)?;
        let i = v / self.steady_impedance(s);
        let sigma = self.omega_b * s * self.t0;
        let j = Complex64::i();
        let e = j * (self.x0 - self.x_tr) * i / (1.0 + j * sigma);
        let state = ImState { e_re: e.re, e_im: e.im, slip: s };
        let te = self.electrical_torque(&state, i);
        self.load_torque = te / (1.0 - s).powi(2);
        let q_machine = (v * i.conj()).im;
        let q_target = p * self.params.power_factor.acos().tan();
        self.capacitor = (q_machine - q_target) / (vm * vm);
        Ok(state)
    }

    /// Power drawn by machine plus capacitor, machine base.
    pub fn terminal_power(&self, state: &ImState, v: Complex64) -> Complex64 {
        let i = self.current(state, v) + Complex64::new(0.0, self.capacitor) * v;
        v * i.conj()
    }
}
