//! Dynamic component models of the feeder and the transmission equivalent,
//! with the grid-support curves and latching protection they share.

mod atl;
mod exciter;
mod governor;
mod ibg;
mod induction;
mod load;
mod machine;
mod protection;

pub use atl::{ActiveThermalLoad, AtlParams, AtlState};
pub use exciter::{rectifier_factor, Ac1aParams, Exciter, ExciterParams, ExciterState};
pub use governor::GovernorParams;
pub use ibg::{IbgParams, IbgState, InverterGeneration};
pub use induction::{ImParams, ImState, InductionMachine};
pub use load::{atl_base_kva, split_background_load, static_load_power, LoadSplit, StaticLoadParams};
pub use machine::{SmParams, SmState, SynchronousMachine};
pub use protection::{check_protection, ProtectionMonitor, ProtectionSettings, Stage, Status};

use serde::{Deserialize, Serialize};

/// Uncertain parameters of the units connected at one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParameters {
    pub alpha: f64,
    pub beta: f64,
    pub f_im: f64,
    pub im: ImParams,
    pub f_atl: f64,
    pub atl: AtlParams,
    pub ibg: IbgParams,
}

impl Default for DeviceParameters {
    /// Mid-range values of the uncertainty set.
    fn default() -> Self {
        Self {
            alpha: 1.5,
            beta: 2.25,
            f_im: 0.1,
            im: ImParams {
                r_s: 0.08,
                r_r: 0.08,
                l_m: 3.25,
                l_s: 0.11,
                l_r: 0.105,
                h: 0.6,
                load_factor: 0.5,
                power_factor: 0.9,
            },
            f_atl: 0.205,
            atl: AtlParams {
                tau_pll: 0.075,
                tau_p: 0.02,
                h: 0.265,
                b: 0.00125,
                r_t: 0.0275,
                l_t: 0.5,
                r_a: 0.055,
                load_factor: 0.8,
            },
            ibg: IbgParams { tau_pll: 0.075, tau_i: 0.02, ramp: 0.35, i_max: 1.1 },
        }
    }
}
