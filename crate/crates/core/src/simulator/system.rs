use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use super::integrator::OdeSystem;
use super::TnProfile;
use crate::devices::{
    atl_base_kva, split_background_load, static_load_power, ActiveThermalLoad, AtlState,
    DeviceParameters, ExciterParams, GovernorParams, IbgState, ImState, InductionMachine,
    InverterGeneration, ProtectionSettings, SmParams, SmState, StaticLoadParams,
    SynchronousMachine,
};
use crate::error::{Error, Result};
use crate::netmodel::{
    build_admittance, interface_current, solve_power_flow, Branch, Bus, BusKind, Complex64,
    NetworkModel, PowerFlowOptions,
};

/// Transmission equivalent behind the feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineSpec {
    pub params: SmParams,
    pub governor: GovernorParams,
    pub exciter: ExciterParams,
    pub rating_mva: f64,
    /// Pre-disturbance electrical loading of the machine, p.u. of its rating.
    pub loading: f64,
}

impl Default for MachineSpec {
    fn default() -> Self {
        Self {
            params: SmParams::default(),
            governor: GovernorParams::default(),
            exciter: ExciterParams::default(),
            rating_mva: 0.5,
            loading: 0.5,
        }
    }
}

/// Everything needed to build the coupled feeder/TN system except the
/// uncertain device parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// Feeder with nodal loads already at the studied loading level.
    pub network: NetworkModel,
    pub tn: TnProfile,
    pub machine: MachineSpec,
    pub protection: ProtectionSettings,
    /// Power factor of the static load component.
    pub static_power_factor: f64,
    /// R/X ratio of the TN coupling branch.
    pub r_over_x: f64,
}

impl SystemSpec {
    pub fn new(network: NetworkModel, tn: TnProfile) -> Self {
        Self {
            network,
            tn,
            machine: MachineSpec::default(),
            protection: ProtectionSettings::default(),
            static_power_factor: 0.98,
            r_over_x: 0.1,
        }
    }

    /// The bundled residential feeder at half of its nominal loading.
    pub fn standard(tn: TnProfile) -> Self {
        let mut network = NetworkModel::cigre_lv_residential();
        network.scale_loads(0.5);
        Self::new(network, tn)
    }
}

#[derive(Debug, Clone)]
struct Unit<D> {
    device: D,
    offset: usize,
    /// Unit rating over system base.
    scale: f64,
}

#[derive(Debug, Clone)]
struct BusUnits {
    bus: usize,
    static_load: Option<StaticLoadParams>,
    im: Option<Unit<InductionMachine>>,
    atl: Option<Unit<ActiveThermalLoad>>,
    ibg: Option<Unit<InverterGeneration>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrippableKind {
    ThermalLoad,
    Generation,
}

/// Switchable part of the system state.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    /// Extra constant-power load at the TN bus, system p.u.
    pub load_step: f64,
    pub atl_tripped: Vec<bool>,
    pub ibg_tripped: Vec<bool>,
}

/// Initialized feeder + TN equivalent, immutable and shareable.
#[derive(Debug, Clone)]
pub struct DynamicSystem {
    feeder: NetworkModel,
    pub f_n: f64,
    pub base_mva: f64,
    pcc: usize,
    tn_bus: usize,
    n_bus: usize,
    lu: LU<Complex64, Dyn, Dyn>,
    pub machine: SynchronousMachine,
    sm_scale: f64,
    units: Vec<BusUnits>,
    tn_load: Complex64,
    y_lin: Vec<Complex64>,
    pub protection: ProtectionSettings,
    n_states: usize,
    x0: Vec<f64>,
    v0: Vec<Complex64>,
    pf_interface_current: Complex64,
}

fn equilibrium_error(device: &str, bus: &Bus, e: Error) -> Error {
    let reason = match e {
        Error::Equilibrium { reason, .. } => reason,
        other => other.to_string(),
    };
    Error::Equilibrium {
        device: format!("{device} at bus {} ({})", bus.id, bus.name),
        reason,
    }
}

/// Extends the feeder with a slack TN bus coupled to the PCC through a branch
/// of impedance `S_base / S_sc` and the given R/X ratio.
pub fn extend_with_tn(feeder: &NetworkModel, short_circuit_mva: f64, r_over_x: f64) -> Result<NetworkModel> {
    if !(short_circuit_mva > 0.0) || r_over_x < 0.0 {
        return Err(Error::InvalidParameter(
            "TN short-circuit power must be positive and R/X non-negative".into(),
        ));
    }
    let mut net = feeder.clone();
    let pcc = net.pcc_index();
    for bus in &mut net.buses {
        bus.kind = BusKind::Pq;
    }
    let id = net.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    net.buses.push(Bus {
        id,
        name: "TN".into(),
        kind: BusKind::Slack,
        nominal_voltage: net.buses[pcc].nominal_voltage,
        v_setpoint: 1.0,
        initial_load_kw: 0.0,
        initial_generation_kw: 0.0,
    });
    let z = net.base_mva / short_circuit_mva;
    let x = z / (1.0 + r_over_x * r_over_x).sqrt();
    net.branches.push(Branch {
        from: id,
        to: net.pcc_bus,
        r: r_over_x * x,
        x,
        b: 0.0,
        tap: 1.0,
    });
    net.validate()?;
    Ok(net)
}

impl DynamicSystem {
    /// Solves the power flow and places every device at equilibrium.
    /// `params[k]` belongs to feeder bus `k`.
    pub fn initialize(spec: &SystemSpec, params: &[DeviceParameters]) -> Result<Self> {
        let feeder = &spec.network;
        feeder.validate()?;
        spec.protection.validate(feeder.f_n)?;
        if params.len() != feeder.buses.len() {
            return Err(Error::DimensionMismatch {
                expected: feeder.buses.len(),
                got: params.len(),
            });
        }
        let ext = extend_with_tn(feeder, spec.tn.short_circuit_mva, spec.r_over_x)?;
        let n_bus = ext.buses.len();
        let tn_bus = n_bus - 1;
        let pcc = feeder.pcc_index();
        let base = feeder.base_mva;
        let f_n = feeder.f_n;
        let tan_static = spec.static_power_factor.acos().tan();

        let mut injections = vec![Complex64::new(0.0, 0.0); n_bus];
        for (k, bus) in feeder.buses.iter().enumerate() {
            let p = &params[k];
            let split = split_background_load(bus.initial_load_kw, p.f_im, p.f_atl)?;
            let q = feeder.kw_to_pu(split.static_kw) * tan_static
                + feeder.kw_to_pu(split.motor_kw) * p.im.power_factor.acos().tan();
            injections[k] = Complex64::new(
                feeder.kw_to_pu(bus.initial_generation_kw - bus.initial_load_kw),
                -q,
            );
        }
        let options = PowerFlowOptions { tolerance: 1e-12, max_iterations: 30 };
        let pf = solve_power_flow(&ext, &injections, &options)?;
        let v = pf.voltages.clone();

        let mut units = Vec::new();
        let mut offset = SmState::LEN;
        let mut x0 = vec![0.0; SmState::LEN];
        let mut y_lin = vec![Complex64::new(0.0, 0.0); n_bus];
        let mut y_aug = build_admittance(&ext)?.matrix;
        for (k, bus) in feeder.buses.iter().enumerate() {
            if bus.initial_load_kw == 0.0 && bus.initial_generation_kw == 0.0 {
                continue;
            }
            let p = &params[k];
            let vm = v[k].norm();
            let split = split_background_load(bus.initial_load_kw, p.f_im, p.f_atl)?;
            let mut entry = BusUnits { bus: k, static_load: None, im: None, atl: None, ibg: None };
            let mut drawn = Complex64::new(0.0, 0.0);
            if split.static_kw > 0.0 {
                let ps = feeder.kw_to_pu(split.static_kw);
                let params = StaticLoadParams::referenced(ps, ps * tan_static, vm, p.alpha, p.beta);
                drawn += Complex64::new(ps, ps * tan_static);
                entry.static_load = Some(params);
            }
            if split.motor_kw > 0.0 {
                let rating = split.motor_kw / 1000.0 / p.im.load_factor;
                let mut m = InductionMachine::new(p.im, rating, f_n)
                    .map_err(|e| equilibrium_error("induction machine", bus, e))?;
                let state = m.initialize(v[k]).map_err(|e| equilibrium_error("induction machine", bus, e))?;
                let scale = rating / base;
                y_aug[(k, k)] += (m.stator_impedance().inv() + Complex64::new(0.0, m.capacitor)) * scale;
                let mut buf = [0.0; ImState::LEN];
                state.write(&mut buf);
                x0.extend_from_slice(&buf);
                entry.im = Some(Unit { device: m, offset, scale });
                offset += ImState::LEN;
            }
            if split.thermal_kw > 0.0 {
                let rating = atl_base_kva(p.f_atl, bus.initial_load_kw, p.atl.load_factor) / 1000.0;
                let mut a = ActiveThermalLoad::new(p.atl, rating, f_n)
                    .map_err(|e| equilibrium_error("thermal load", bus, e))?;
                let state = a.initialize(vm).map_err(|e| equilibrium_error("thermal load", bus, e))?;
                let scale = rating / base;
                let (pa, qa) = a.power(&state, vm);
                drawn += Complex64::new(pa, qa) * scale;
                let mut buf = [0.0; AtlState::LEN];
                state.write(&mut buf);
                x0.extend_from_slice(&buf);
                entry.atl = Some(Unit { device: a, offset, scale });
                offset += AtlState::LEN;
            }
            if bus.initial_generation_kw > 0.0 {
                let rating = bus.initial_generation_kw / 1000.0;
                let mut g = InverterGeneration::new(p.ibg, rating, f_n)
                    .map_err(|e| equilibrium_error("generation", bus, e))?;
                let state = g.initialize(vm).map_err(|e| equilibrium_error("generation", bus, e))?;
                let mut buf = [0.0; IbgState::LEN];
                state.write(&mut buf);
                x0.extend_from_slice(&buf);
                entry.ibg = Some(Unit { device: g, offset, scale: rating / base });
                offset += IbgState::LEN;
            }
            y_lin[k] = drawn.conj() / (vm * vm);
            units.push(entry);
        }

        // Machine output = power into the coupling branch + the TN load.
        let m = &spec.machine;
        let sm_scale = m.rating_mva / base;
        let v_tn = v[tn_bus];
        let s_line = pf.injections[tn_bus];
        let tn_load = Complex64::new(m.loading * sm_scale - s_line.re, 0.0);
        let i_sm = ((s_line + tn_load) / v_tn).conj() / sm_scale;
        let params_sm = SmParams { h: spec.tn.inertia_s, ..m.params };
        let (machine, sm_state) = SynchronousMachine::initialize(
            params_sm, m.governor, m.exciter, m.rating_mva, f_n, v_tn, i_sm,
        )
        .map_err(|e| Error::Equilibrium {
            device: "TN equivalent machine".into(),
            reason: e.to_string(),
        })?;
        sm_state.write(&mut x0[..SmState::LEN]);
        y_aug[(tn_bus, tn_bus)] += machine.source_impedance().inv() * sm_scale;
        y_lin[tn_bus] = tn_load.conj() / v_tn.norm_sqr();
        for k in 0..n_bus {
            y_aug[(k, k)] += y_lin[k];
        }
        let lu = y_aug.lu();
        let pf_interface_current = feeder.current_leaving(pcc, &v[..feeder.buses.len()])?;

        let system = Self {
            feeder: feeder.clone(),
            f_n,
            base_mva: base,
            pcc,
            tn_bus,
            n_bus,
            lu,
            machine,
            sm_scale,
            units,
            tn_load,
            y_lin,
            protection: spec.protection.clone(),
            n_states: offset,
            x0,
            v0: v,
            pf_interface_current,
        };
        system.check_equilibrium()?;
        Ok(system)
    }

    fn check_equilibrium(&self) -> Result<()> {
        let disc = self.discrete();
        let mut v = self.v0.clone();
        self.solve_network(&self.x0, &disc, &mut v)?;
        let mismatch = v.iter().zip(&self.v0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if mismatch > 1e-8 {
            return Err(Error::Equilibrium {
                device: "network".into(),
                reason: format!("dynamic network solution deviates {mismatch:.2e} p.u. from the power flow"),
            });
        }
        let mut dx = vec![0.0; self.n_states];
        self.derivatives(&self.x0, &disc, &v, &mut dx);
        let (worst, value) = dx
            .iter()
            .enumerate()
            .map(|(i, d)| (i, d.abs()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if value > 1e-7 {
            return Err(Error::Equilibrium {
                device: self.describe_state(worst),
                reason: format!("initial derivative {value:.2e} is not zero"),
            });
        }
        Ok(())
    }

    /// Human-readable owner of state index `i`.
    pub fn describe_state(&self, i: usize) -> String {
        if i < SmState::LEN {
            return "TN equivalent machine".into();
        }
        for u in &self.units {
            let name = &self.feeder.buses[u.bus].name;
            if let Some(m) = &u.im {
                if (m.offset..m.offset + ImState::LEN).contains(&i) {
                    return format!("induction machine at bus {name}");
                }
            }
            if let Some(a) = &u.atl {
                if (a.offset..a.offset + AtlState::LEN).contains(&i) {
                    return format!("thermal load at bus {name}");
                }
            }
            if let Some(g) = &u.ibg {
                if (g.offset..g.offset + IbgState::LEN).contains(&i) {
                    return format!("generation at bus {name}");
                }
            }
        }
        format!("state {i}")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    pub fn initial_voltages(&self) -> &[Complex64] {
        &self.v0
    }

    pub fn feeder(&self) -> &NetworkModel {
        &self.feeder
    }

    /// Interface current from the power flow (system p.u., network frame).
    pub fn power_flow_interface_current(&self) -> Complex64 {
        self.pf_interface_current
    }

    pub fn tn_load(&self) -> Complex64 {
        self.tn_load
    }

    pub fn discrete(&self) -> Discrete {
        Discrete {
            load_step: 0.0,
            atl_tripped: vec![false; self.units.len()],
            ibg_tripped: vec![false; self.units.len()],
        }
    }

    /// Solves the algebraic network equations for the given dynamic states,
    /// starting from (and overwriting) `v`.
    pub fn solve_network(&self, x: &[f64], disc: &Discrete, v: &mut [Complex64]) -> Result<()> {
        let sm = SmState::read(&x[..SmState::LEN]);
        let mut source = vec![Complex64::new(0.0, 0.0); self.n_bus];
        source[self.tn_bus] =
            self.machine.emf(&sm) / self.machine.source_impedance() * self.sm_scale;
        for u in &self.units {
            if let Some(m) = &u.im {
                let e = ImState::read(&x[m.offset..]).emf();
                source[u.bus] += e / m.device.stator_impedance() * m.scale;
            }
        }
        let s_tn = self.tn_load + disc.load_step;
        let mut rhs = DVector::from_element(self.n_bus, Complex64::new(0.0, 0.0));
        for _ in 0..200 {
            for k in 0..self.n_bus {
                rhs[k] = source[k] + self.y_lin[k] * v[k];
            }
            rhs[self.tn_bus] -= (s_tn / v[self.tn_bus]).conj();
            for (idx, u) in self.units.iter().enumerate() {
                rhs[u.bus] += self.nonlinear_current(idx, u, x, disc, v[u.bus]);
            }
            let next = self.lu.solve(&rhs).ok_or_else(|| Error::IntegrationAborted {
                time: f64::NAN,
                reason: "singular network matrix".into(),
            })?;
            let mut change: f64 = 0.0;
            for k in 0..self.n_bus {
                change = change.max((next[k] - v[k]).norm());
                v[k] = next[k];
            }
            if !change.is_finite() || v.iter().any(|vk| vk.norm() < 1e-3) {
                break;
            }
            if change < 1e-13 {
                return Ok(());
            }
        }
        Err(Error::IntegrationAborted {
            time: f64::NAN,
            reason: "network solution did not converge (voltage collapse)".into(),
        })
    }

    fn nonlinear_current(&self, idx: usize, u: &BusUnits, x: &[f64], disc: &Discrete, vk: Complex64) -> Complex64 {
        let vm = vk.norm();
        let mut s = Complex64::new(0.0, 0.0);
        if let Some(p) = &u.static_load {
            let (pl, ql) = static_load_power(vm, p).unwrap_or((0.0, 0.0));
            s += Complex64::new(pl, ql);
        }
        if let Some(a) = &u.atl {
            if !disc.atl_tripped[idx] {
                let (pa, qa) = a.device.power(&AtlState::read(&x[a.offset..]), vm);
                s += Complex64::new(pa, qa) * a.scale;
            }
        }
        let mut i = -(s / vk).conj();
        if let Some(g) = &u.ibg {
            if !disc.ibg_tripped[idx] {
                i += g.device.injection(&IbgState::read(&x[g.offset..]), vk) * g.scale;
            }
        }
        i
    }

    /// State derivatives given a solved network.
    pub fn derivatives(&self, x: &[f64], disc: &Discrete, v: &[Complex64], dx: &mut [f64]) {
        let sm = SmState::read(&x[..SmState::LEN]);
        self.machine.derivatives(&sm, v[self.tn_bus]).write(&mut dx[..SmState::LEN]);
        // Phasors rotate with the machine rotor, so its angle is fixed.
        dx[0] = 0.0;
        let omega = sm.omega;
        for (idx, u) in self.units.iter().enumerate() {
            let vk = v[u.bus];
            if let Some(m) = &u.im {
                let (d, _) = m.device.derivatives_in_frame(&ImState::read(&x[m.offset..]), vk, omega);
                d.write(&mut dx[m.offset..]);
            }
            if let Some(a) = &u.atl {
                let d = if disc.atl_tripped[idx] {
                    AtlState::default()
                } else {
                    a.device.derivatives(&AtlState::read(&x[a.offset..]), omega, &self.protection)
                };
                d.write(&mut dx[a.offset..]);
            }
            if let Some(g) = &u.ibg {
                let d = if disc.ibg_tripped[idx] {
                    IbgState::default()
                } else {
                    g.device.derivatives(&IbgState::read(&x[g.offset..]), vk.norm(), omega, &self.protection)
                };
                d.write(&mut dx[g.offset..]);
            }
        }
    }

    /// PCC voltage magnitude, TN frequency (p.u.) and interface currents
    /// `(i_p, i_q)` for a solved network.
    pub fn measurements(&self, x: &[f64], v: &[Complex64]) -> Result<(f64, f64, f64, f64)> {
        let n = self.feeder.buses.len();
        let v_pcc = v[self.pcc];
        let i = self.feeder.current_leaving(self.pcc, &v[..n])?;
        let (ip, iq) = interface_current(v_pcc, i)?;
        Ok((v_pcc.norm(), x[1], ip, iq))
    }

    /// Trippable units: `(unit index, kind, bus index, PLL frequency state offset)`.
    pub(crate) fn trippable(&self) -> Vec<(usize, TrippableKind, usize, usize)> {
        let mut out = Vec::new();
        for (idx, u) in self.units.iter().enumerate() {
            if let Some(a) = &u.atl {
                out.push((idx, TrippableKind::ThermalLoad, u.bus, a.offset));
            }
            if let Some(g) = &u.ibg {
                out.push((idx, TrippableKind::Generation, u.bus, g.offset));
            }
        }
        out
    }

    /// Electrical power of the TN machine, machine base.
    pub fn machine_electrical_power(&self, x: &[f64], v: &[Complex64]) -> f64 {
        let sm = SmState::read(&x[..SmState::LEN]);
        let i = self.machine.current(&sm, v[self.tn_bus]);
        self.machine.electrical_power(&sm, i)
    }

    pub fn bus_name(&self, bus: usize) -> &str {
        &self.feeder.buses[bus].name
    }
}

/// Mutable integration view of a [`DynamicSystem`]: warm-started network
/// voltages plus the discrete state.
pub struct Plant<'a> {
    pub system: &'a DynamicSystem,
    pub voltages: Vec<Complex64>,
    pub discrete: Discrete,
    last_good: Vec<Complex64>,
}

impl<'a> Plant<'a> {
    pub fn new(system: &'a DynamicSystem) -> Self {
        Self {
            system,
            voltages: system.v0.clone(),
            discrete: system.discrete(),
            last_good: system.v0.clone(),
        }
    }
}

impl OdeSystem for Plant<'_> {
    fn dim(&self) -> usize {
        self.system.n_states
    }

    fn rhs(&mut self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        if let Err(e) = self.system.solve_network(x, &self.discrete, &mut self.voltages) {
            self.voltages.copy_from_slice(&self.last_good);
            return Err(e);
        }
        self.last_good.copy_from_slice(&self.voltages);
        self.system.derivatives(x, &self.discrete, &self.voltages, dx);
        Ok(())
    }
}

/// Dense matrix of the linearized system at its initial point (diagnostics).
pub fn initial_jacobian(system: &DynamicSystem) -> Result<DMatrix<f64>> {
    let mut plant = Plant::new(system);
    let n = system.n_states;
    let x0 = system.x0.clone();
    let mut f0 = vec![0.0; n];
    plant.rhs(&x0, &mut f0)?;
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x0.clone();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        let eps = 1e-7 * (1.0 + x0[j].abs());
        xp[j] += eps;
        plant.rhs(&xp, &mut fp)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - f0[i]) / eps;
        }
        xp[j] = x0[j];
    }
    Ok(jac)
}
