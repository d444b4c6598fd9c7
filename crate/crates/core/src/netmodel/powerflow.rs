use nalgebra::{DMatrix, DVector};

use super::{build_admittance, BusKind, Complex64, NetworkModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Largest acceptable active/reactive mismatch in p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub voltages: Vec<Complex64>,
    /// Complex power injected at each bus, `v * conj(Y v)`.
    pub injections: Vec<Complex64>,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    /// Sum of series and shunt losses (equals the sum of injections).
    pub fn losses(&self) -> Complex64 {
        self.injections.iter().sum()
    }
}

/// Polar Newton-Raphson from a flat start. `injections` holds the specified
/// complex power injection (generation minus load) per bus; the entry of the
/// slack bus is ignored.
pub fn solve_power_flow(
    network: &NetworkModel,
    injections: &[Complex64],
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = network.buses.len();
    if injections.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: injections.len(),
        });
    }
    let y = build_admittance(network)?.matrix;
    let slack = network.slack_index();
    let pq: Vec<usize> = (0..n)
        .filter(|&k| network.buses[k].kind == BusKind::Pq)
        .collect();
    let np = pq.len();

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    vm[slack] = network.buses[slack].v_setpoint;

    let phasors = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter()
            .zip(va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    };

    let mismatch = |v: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>, f64) {
        let current: Vec<Complex64> = (0..n)
            .map(|a| (0..n).map(|b| y[(a, b)] * v[b]).sum())
            .collect();
        let s: Vec<Complex64> = (0..n).map(|k| v[k] * current[k].conj()).collect();
        let worst = pq
            .iter()
            .map(|&k| {
                let d = s[k] - injections[k];
                d.re.abs().max(d.im.abs())
            })
            .fold(0.0, f64::max);
        (current, s, worst)
    };

    let mut v = phasors(&vm, &va);
    let (mut current, mut s, mut worst) = mismatch(&v);
    let mut iterations = 0;
    while worst > options.tolerance {
        if iterations == options.max_iterations {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: worst,
            });
        }
        iterations += 1;

        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let mut jac = DMatrix::<f64>::zeros(2 * np, 2 * np);
        for (r, &a) in pq.iter().enumerate() {
            for (c, &b) in pq.iter().enumerate() {
                let unit_b = v[b] / vm[b];
                let mut ds_dva = -v[a] * (y[(a, b)] * v[b]).conj();
                let mut ds_dvm = v[a] * (y[(a, b)] * unit_b).conj();
                if a == b {
                    ds_dva += v[a] * current[a].conj();
                    ds_dvm += current[a].conj() * unit_b;
                }
                let ds_dva = Complex64::new(0.0, 1.0) * ds_dva;
                jac[(r, c)] = ds_dva.re;
                jac[(r, np + c)] = ds_dvm.re;
                jac[(np + r, c)] = ds_dva.im;
                jac[(np + r, np + c)] = ds_dvm.im;
            }
        }
        let rhs = DVector::from_iterator(
            2 * np,
            pq.iter()
                .map(|&k| -(s[k] - injections[k]).re)
                .chain(pq.iter().map(|&k| -(s[k] - injections[k]).im)),
        );
        let step = jac.lu().solve(&rhs).ok_or(Error::PowerFlowDiverged {
            iterations,
            mismatch: worst,
        })?;
        for (r, &k) in pq.iter().enumerate() {
            va[k] += step[r];
            vm[k] += step[np + r];
        }
        v = phasors(&vm, &va);
        (current, s, worst) = mismatch(&v);
        if !worst.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: worst,
            });
        }
    }
    Ok(PowerFlowSolution {
        voltages: v,
        injections: s,
        converged: true,
        residual: worst,
        iterations,
    })
}
