use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::exciter::{Exciter, ExciterParams, ExciterState};
use super::governor::GovernorParams;
use crate::error::{Error, Result};
use crate::netmodel::Complex64;

/// Fifth-order synchronous machine, p.u. on the machine rating. The
/// subtransient reactances are equal so the stator is a constant Norton source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmParams {
    pub h: f64,
    pub d: f64,
    pub r_a: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d1: f64,
    pub x_2: f64,
    pub t_d01: f64,
    pub t_d02: f64,
    pub t_q02: f64,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            h: 6.0,
            d: 0.0,
            r_a: 0.003,
            x_d: 1.0,
            x_q: 0.65,
            x_d1: 0.3,
            x_2: 0.25,
            t_d01: 8.0,
            t_d02: 0.03,
            t_q02: 0.05,
        }
    }
}

/// Rotor angle (rad), speed (p.u.), `e'_q`, `e''_q`, `e''_d`, servo valve
/// position and the exciter states.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmState {
    pub delta: f64,
    pub omega: f64,
    pub eq1: f64,
    pub eq2: f64,
    pub ed2: f64,
    pub valve: f64,
    pub exciter: ExciterState,
}

impl SmState {
    pub const LEN: usize = 6 + ExciterState::LEN;

    pub fn read(x: &[f64]) -> Self {
        Self {
            delta: x[0],
            omega: x[1],
            eq1: x[2],
            eq2: x[3],
            ed2: x[4],
            valve: x[5],
            exciter: ExciterState { x: [x[6], x[7], x[8]] },
        }
    }

    pub fn write(&self, x: &mut [f64]) {
        x[..Self::LEN].copy_from_slice(&[
            self.delta,
            self.omega,
            self.eq1,
            self.eq2,
            self.ed2,
            self.valve,
            self.exciter.x[0],
            self.exciter.x[1],
            self.exciter.x[2],
        ]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynchronousMachine {
    pub params: SmParams,
    pub governor: GovernorParams,
    pub exciter: Exciter,
    pub rating_mva: f64,
    omega_b: f64,
    /// Governor power reference.
    pub p_ref: f64,
}

fn rotation(delta: f64) -> Complex64 {
    Complex64::from_polar(1.0, delta - FRAC_PI_2)
}

impl SynchronousMachine {
    /// Builds the machine in steady state delivering `current` (machine base,
    /// generator convention) at terminal voltage `v`.
    pub fn initialize(
        params: SmParams,
        governor: GovernorParams,
        exciter: ExciterParams,
        rating_mva: f64,
        f_n: f64,
        v: Complex64,
        current: Complex64,
    ) -> Result<(Self, SmState)> {
        let p = &params;
        if [p.h, p.x_d, p.x_q, p.x_d1, p.x_2, p.t_d01, p.t_d02, p.t_q02, rating_mva, f_n]
            .iter()
            .any(|v| !(*v > 0.0))
            || !(governor.r > 0.0 && governor.t1 > 0.0)
        {
            return Err(Error::InvalidParameter(
                "synchronous machine parameters must be positive".into(),
            ));
        }
        let e_q = v + Complex64::new(p.r_a, p.x_q) * current;
        let delta = e_q.arg();
        let back = rotation(delta).conj();
        let i_dq = current * back;
        let (id, iq) = (i_dq.re, i_dq.im);
        let efd = e_q.norm() + (p.x_d - p.x_q) * id;
        let eq1 = efd - (p.x_d - p.x_d1) * id;
        let eq2 = eq1 - (p.x_d1 - p.x_2) * id;
        let ed2 = (p.x_q - p.x_2) * iq;
        let pe = ed2 * id + eq2 * iq;
        if pe < governor.v_min || pe > governor.v_max {
            return Err(Error::Equilibrium {
                device: "synchronous machine".into(),
                reason: format!("mechanical power {pe:.3} outside the valve range"),
            });
        }
        let ifd = eq1 + (p.x_d - p.x_d1) * id;
        let (exciter, exc_state) = Exciter::initialize(exciter, efd, ifd, v.norm())?;
        let machine = Self {
            params,
            governor,
            exciter,
            rating_mva,
            omega_b: 2.0 * PI * f_n,
            p_ref: pe,
        };
        let state = SmState {
            delta,
            omega: 1.0,
            eq1,
            eq2,
            ed2,
            valve: pe,
            exciter: exc_state,
        };
        Ok((machine, state))
    }

    pub fn source_impedance(&self) -> Complex64 {
        Complex64::new(self.params.r_a, self.params.x_2)
    }

    /// Subtransient EMF in the network frame.
    pub fn emf(&self, state: &SmState) -> Complex64 {
        Complex64::new(state.ed2, state.eq2) * rotation(state.delta)
    }

    /// Stator current injected into the terminal bus.
    pub fn current(&self, state: &SmState, v: Complex64) -> Complex64 {
        (self.emf(state) - v) / self.source_impedance()
    }

    pub fn electrical_power(&self, state: &SmState, current: Complex64) -> f64 {
        let i = current * rotation(state.delta).conj();
        state.ed2 * i.re + state.eq2 * i.im
    }

    pub fn mechanical_power(&self, state: &SmState) -> f64 {
        self.governor.mechanical_power(state.valve, state.omega)
    }

    pub fn derivatives(&self, state: &SmState, v: Complex64) -> SmState {
        let p = &self.params;
        let current = self.current(state, v);
        let i = current * rotation(state.delta).conj();
        let (id, iq) = (i.re, i.im);
        let pe = state.ed2 * id + state.eq2 * iq;
        let pm = self.mechanical_power(state);
        let ifd = state.eq1 + (p.x_d - p.x_d1) * id;
        let efd = self.exciter.field_voltage(&state.exciter, ifd);
        SmState {
            delta: self.omega_b * (state.omega - 1.0),
            omega: ((pm - pe) / state.omega - p.d * (state.omega - 1.0)) / (2.0 * p.h),
            eq1: (efd - state.eq1 - (p.x_d - p.x_d1) * id) / p.t_d01,
            eq2: (state.eq1 - state.eq2 - (p.x_d1 - p.x_2) * id) / p.t_d02,
            ed2: (-state.ed2 + (p.x_q - p.x_2) * iq) / p.t_q02,
            valve: self.governor.derivative(state.valve, state.omega, self.p_ref),
            exciter: self.exciter.derivatives(&state.exciter, v.norm(), ifd),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(v: Complex64, s: Complex64) -> (SynchronousMachine, SmState) {
        let current = (s / v).conj();
        SynchronousMachine::initialize(
            SmParams::default(),
            GovernorParams::default(),
            ExciterParams::default(),
            1.0,
            50.0,
            v,
            current,
        )
        .unwrap()
    }

    fn norm(d: &SmState) -> f64 {
        let mut x = [0.0; SmState::LEN];
        d.write(&mut x);
        x.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let v = Complex64::from_polar(1.01, 0.1);
        let (m, x) = build(v, Complex64::new(0.5, 0.1));
        assert!(norm(&m.derivatives(&x, v)) < 1e-10);
        let i = m.current(&x, v);
        let s = v * i.conj();
        assert!((s - Complex64::new(0.5, 0.1)).norm() < 1e-10);
    }

    /// Islanded machine feeding a constant-power load; explicit small-step
    /// integration with the terminal voltage solved from the Norton source.
    fn islanded_frequency(step: f64) -> (f64, f64) {
        let v0 = Complex64::new(1.0, 0.0);
        let load = Complex64::new(0.5, 0.1);
        let (m, mut x) = build(v0, load);
        let z = m.source_impedance();
        let mut v = v0;
        let solve = |x: &SmState, v: &mut Complex64, s: Complex64| {
            for _ in 0..100 {
                let i_load = (s / *v).conj();
                *v = m.emf(x) - z * i_load;
            }
        };
        let s1 = load + Complex64::new(step, 0.0);
        let dt = 1e-3;
        for _ in 0..(120.0 / dt) as usize {
            solve(&x, &mut v, s1);
            let d = m.derivatives(&x, v);
            let mut a = [0.0; SmState::LEN];
            let mut b = [0.0; SmState::LEN];
            x.write(&mut a);
            d.write(&mut b);
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += dt * bi;
            }
            x = SmState::read(&a);
        }
        solve(&x, &mut v, s1);
        let i = m.current(&x, v);
        let losses = m.params.r_a * i.norm_sqr();
        let losses0 = m.params.r_a * (load / v0).norm_sqr();
        (x.omega - 1.0, step + losses - losses0)
    }

    #[test]
    fn islanded_droop_matches_algebra() {
        let r = GovernorParams::default().r;
        for step in [0.1, 0.2, -0.3] {
            let (dw, dp) = islanded_frequency(step);
            let oracle = -r * step;
            assert!(((dw - oracle) / oracle).abs() < 0.02, "step {step}: {dw} vs {oracle}");
            assert!(((dw + r * dp) / (r * dp)).abs() < 1e-3);
        }
    }
}
