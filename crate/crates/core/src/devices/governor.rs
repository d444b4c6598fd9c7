use serde::{Deserialize, Serialize};

/// TGOV1 with `T2 = T3 = 0`: droop feeding a first-order servo whose
/// input is limited to the valve range, so the state never leaves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    /// Permanent droop, p.u. speed per p.u. power.
    pub r: f64,
    pub t1: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Turbine damping `D_t`.
    pub d_t: f64,
}

impl Default for GovernorParams {
    fn default() -> Self {
        Self { r: 0.04, t1: 0.5, v_min: 0.0, v_max: 1.0, d_t: 0.0 }
    }
}

impl GovernorParams {
    /// Valve position derivative; `valve` is the servo state.
    pub fn derivative(&self, valve: f64, omega: f64, p_ref: f64) -> f64 {
        let target = (p_ref - (omega - 1.0) / self.r).clamp(self.v_min, self.v_max);
        (target - valve) / self.t1
    }

    pub fn mechanical_power(&self, valve: f64, omega: f64) -> f64 {
        valve.clamp(self.v_min, self.v_max) - self.d_t * (omega - 1.0)
    }

    /// Steady-state mechanical power change for a speed deviation.
    pub fn droop_response(&self, d_omega: f64) -> f64 {
        -d_omega / self.r
    }
}
