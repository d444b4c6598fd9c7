use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IEEE AC1A excitation system with `T_R = T_B = T_C = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ac1aParams {
    pub k_a: f64,
    pub t_a: f64,
    pub va_max: f64,
    pub va_min: f64,
    pub vr_max: f64,
    pub vr_min: f64,
    pub t_e: f64,
    pub k_f: f64,
    pub t_f: f64,
    pub k_c: f64,
    pub k_d: f64,
    pub k_e: f64,
    /// Saturation points `(E1, SE(E1))`, `(E2, SE(E2))`.
    pub e1: f64,
    pub se1: f64,
    pub e2: f64,
    pub se2: f64,
}

impl Default for Ac1aParams {
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            k_a: 400.0,
            t_a: 0.02,
            va_max: 14.5,
            va_min: -14.5,
            vr_max: 6.03,
            vr_min: -5.43,
            t_e: 0.8,
            k_f: 0.03,
            t_f: 1.0,
            k_c: 0.2,
            k_d: 0.38,
            k_e: 1.0,
            e1: 4.18,
            se1: 0.1,
            e2: 3.14,
            se2: 0.03,
        }
    }
}

/// Rectifier regulation characteristic `F_EX(I_N)`.
pub fn rectifier_factor(i_n: f64) -> f64 {
    if i_n <= 0.0 {
        1.0
    } else if i_n <= 0.433 {
        1.0 - 0.577 * i_n
    } else if i_n <= 0.75 {
        (0.75 - i_n * i_n).sqrt()
    } else if i_n <= 1.0 {
        1.732 * (1.0 - i_n)
    } else {
        0.0
    }
}

impl Ac1aParams {
    /// Quadratic saturation `SE(VE) = B (VE - A)^2 / VE` through both points.
    pub fn saturation_coefficients(&self) -> (f64, f64) {
        if self.se1 <= 0.0 || self.se2 <= 0.0 {
            return (0.0, 0.0);
        }
        let ratio = (self.se1 * self.e1 / (self.se2 * self.e2)).sqrt();
        let a = (ratio * self.e2 - self.e1) / (ratio - 1.0);
        let b = self.se1 * self.e1 / (self.e1 - a).powi(2);
        (a, b)
    }

    pub fn saturation(&self, ve: f64) -> f64 {
        let (a, b) = self.saturation_coefficients();
        if b == 0.0 || ve <= a || ve <= 0.0 {
            0.0
        } else {
            b * (ve - a).powi(2) / ve
        }
    }

    fn feedback(&self, ve: f64, ifd: f64) -> f64 {
        self.k_e * ve + self.saturation(ve) * ve + self.k_d * ifd
    }

    pub fn field_voltage(&self, ve: f64, ifd: f64) -> f64 {
        if ve <= 0.0 {
            return 0.0;
        }
        ve * rectifier_factor(self.k_c * ifd / ve)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ExciterParams {
    Ac1a(Ac1aParams),
    /// Proportional regulator with a single lag and output limits.
    FirstOrder { k: f64, t: f64, efd_min: f64, efd_max: f64 },
}

impl Default for ExciterParams {
    fn default() -> Self {
        ExciterParams::Ac1a(Ac1aParams::default())
    }
}

/// Exciter states `[VA, VE, rate-feedback]` (AC1A) or `[EFD, -, -]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExciterState {
    pub x: [f64; 3],
}

impl ExciterState {
    pub const LEN: usize = 3;
}

/// Exciter with its voltage reference fixed at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exciter {
    pub params: ExciterParams,
    pub v_ref: f64,
}

impl Exciter {
    /// Solves the steady state delivering `efd` with field current `ifd`
    /// at terminal voltage `vt`.
    pub fn initialize(params: ExciterParams, efd: f64, ifd: f64, vt: f64) -> Result<(Self, ExciterState)> {
        let fail = |reason: String| Error::Equilibrium { device: "exciter".into(), reason };
        match params {
            ExciterParams::Ac1a(p) => {
                // VE F_EX(K_C IFD / VE) is increasing in VE; bisection on it.
                let g = |ve: f64| p.field_voltage(ve, ifd) - efd;
                let (mut lo, mut hi) = (1e-9, 1.0);
                while g(hi) < 0.0 {
                    hi *= 2.0;
                    if hi > 1e6 {
                        return Err(fail(format!("no exciter voltage delivers EFD = {efd:.4}")));
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let ve = 0.5 * (lo + hi);
                let vfe = p.feedback(ve, ifd);
                if vfe > p.vr_max || vfe < p.vr_min || vfe > p.va_max || vfe < p.va_min {
                    return Err(fail(format!("regulator output {vfe:.3} outside its limits")));
                }
                let v_ref = vt + vfe / p.k_a;
                Ok((Self { params, v_ref }, ExciterState { x: [vfe, ve, vfe] }))
            }
            ExciterParams::FirstOrder { k, efd_min, efd_max, .. } => {
                if efd < efd_min || efd > efd_max {
                    return Err(fail(format!("EFD = {efd:.3} outside its limits")));
                }
                Ok((Self { params, v_ref: vt + efd / k }, ExciterState { x: [efd, 0.0, 0.0] }))
            }
        }
    }

    pub fn field_voltage(&self, state: &ExciterState, ifd: f64) -> f64 {
        match self.params {
            ExciterParams::Ac1a(p) => p.field_voltage(state.x[1], ifd),
            ExciterParams::FirstOrder { efd_min, efd_max, .. } => state.x[0].clamp(efd_min, efd_max),
        }
    }

    pub fn derivatives(&self, state: &ExciterState, vt: f64, ifd: f64) -> ExciterState {
        match self.params {
            ExciterParams::Ac1a(p) => {
                let [va, ve, xf] = state.x;
                let vfe = p.feedback(ve, ifd);
                let vf = p.k_f * (vfe - xf) / p.t_f;
                let dva = ((p.k_a * (self.v_ref - vt - vf)).clamp(p.va_min, p.va_max) - va) / p.t_a;
                let vr = va.clamp(p.vr_min, p.vr_max);
                let mut dve = (vr - vfe) / p.t_e;
                if ve <= 0.0 && dve < 0.0 {
                    dve = 0.0;
                }
                ExciterState { x: [dva, dve, (vfe - xf) / p.t_f] }
            }
            ExciterParams::FirstOrder { k, t, efd_min, efd_max } => {
                let efd = state.x[0];
                let d = ((k * (self.v_ref - vt)).clamp(efd_min, efd_max) - efd) / t;
                ExciterState { x: [d, 0.0, 0.0] }
            }
        }
    }
}
