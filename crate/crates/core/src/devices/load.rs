use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential (voltage-dependent) static load, p.u. on the system base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticLoadParams {
    pub p0: f64,
    pub q0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StaticLoadParams {
    /// Chooses `p0`, `q0` so the load draws exactly `(p, q)` at voltage `v0`.
    pub fn referenced(p: f64, q: f64, v0: f64, alpha: f64, beta: f64) -> Self {
        Self {
            p0: p / v0.powf(alpha),
            q0: q / v0.powf(beta),
            alpha,
            beta,
        }
    }
}

/// `P = P0 v^alpha`, `Q = Q0 v^beta`.
pub fn static_load_power(v: f64, params: &StaticLoadParams) -> Result<(f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "static load evaluated at non-positive voltage {v}"
        )));
    }
    Ok((params.p0 * v.powf(params.alpha), params.q0 * v.powf(params.beta)))
}

/// Shares of the initial nodal load, kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSplit {
    pub static_kw: f64,
    pub motor_kw: f64,
    pub thermal_kw: f64,
}

pub fn split_background_load(p0_kw: f64, f_im: f64, f_atl: f64) -> Result<LoadSplit> {
    if f_im < 0.0 || f_atl < 0.0 || f_im + f_atl > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "load shares f_im = {f_im}, f_atl = {f_atl} do not form a valid split"
        )));
    }
    Ok(LoadSplit {
        static_kw: (1.0 - f_im - f_atl) * p0_kw,
        motor_kw: f_im * p0_kw,
        thermal_kw: f_atl * p0_kw,
    })
}

/// Rated power of a thermal load unit, `S_b = f_atl P0 / LF`.
pub fn atl_base_kva(f_atl: f64, p0_kw: f64, load_factor: f64) -> f64 {
    f_atl * p0_kw / load_factor
}
