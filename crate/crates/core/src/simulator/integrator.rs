use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Autonomous ODE `x' = f(x)`. Implementations may keep internal warm-start
/// state; they must be deterministic for identical call sequences.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Local error tolerance, relative to `1 + |x|` per component.
    pub tolerance: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { tolerance: 1e-6, h_min: 1e-3, h_max: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub jacobians: usize,
    pub factorizations: usize,
}

/// Adaptive-step trapezoidal rule. The corrector is solved by modified Newton
/// on a finite-difference Jacobian; the local error is estimated from the
/// difference to a variable-step second-order Adams-Bashforth predictor.
pub struct Trapezoidal {
    pub control: StepControl,
    pub stats: IntegratorStats,
    x: Vec<f64>,
    f: Vec<f64>,
    f_prev: Option<(Vec<f64>, f64)>,
    jac: Option<DMatrix<f64>>,
    lu: Option<(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, f64)>,
    h: f64,
}

impl Trapezoidal {
    pub fn new<S: OdeSystem>(system: &mut S, x0: &[f64], control: StepControl) -> Result<Self> {
        let mut f = vec![0.0; x0.len()];
        system.rhs(x0, &mut f)?;
        Ok(Self {
            control,
            stats: IntegratorStats::default(),
            x: x0.to_vec(),
            f,
            f_prev: None,
            jac: None,
            lu: None,
            h: control.h_min,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn derivative(&self) -> &[f64] {
        &self.f
    }

    /// Forgets the step history after a discontinuity; the next step starts
    /// at the minimum size.
    pub fn restart<S: OdeSystem>(&mut self, system: &mut S) -> Result<()> {
        system.rhs(&self.x.clone(), &mut self.f)?;
        self.f_prev = None;
        self.jac = None;
        self.lu = None;
        self.h = self.control.h_min;
        Ok(())
    }

    fn jacobian<S: OdeSystem>(&mut self, system: &mut S) -> Result<()> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = self.x.clone();
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let eps = 1e-7 * (1.0 + self.x[j].abs());
            xp[j] = self.x[j] + eps;
            system.rhs(&xp, &mut fp)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - self.f[i]) / eps;
            }
            xp[j] = self.x[j];
        }
        // Restore the warm start at the current point.
        system.rhs(&self.x.clone(), &mut fp)?;
        self.stats.jacobians += 1;
        self.jac = Some(jac);
        self.lu = None;
        Ok(())
    }

    fn factor(&mut self, h: f64) {
        if matches!(self.lu, Some((_, hh)) if hh == h) {
            return;
        }
        let jac = self.jac.as_ref().expect("jacobian available");
        let n = jac.nrows();
        let m = DMatrix::identity(n, n) - jac * (0.5 * h);
        self.lu = Some((m.lu(), h));
        self.stats.factorizations += 1;
    }

    fn weight(&self, i: usize) -> f64 {
        self.control.tolerance * (1.0 + self.x[i].abs())
    }

    /// Solves the trapezoidal corrector from predictor `y`.
    fn correct<S: OdeSystem>(&mut self, system: &mut S, h: f64, mut y: Vec<f64>) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let n = y.len();
        let mut fy = vec![0.0; n];
        let mut previous = f64::INFINITY;
        for _ in 0..10 {
            if system.rhs(&y, &mut fy).is_err() {
                return Ok(None);
            }
            let g = DVector::from_iterator(
                n,
                (0..n).map(|i| -(y[i] - self.x[i] - 0.5 * h * (self.f[i] + fy[i]))),
            );
            self.factor(h);
            let (lu, _) = self.lu.as_ref().expect("factored");
            let Some(delta) = lu.solve(&g) else {
                return Ok(None);
            };
            let mut size: f64 = 0.0;
            for i in 0..n {
                y[i] += delta[i];
                size = size.max(delta[i].abs() / self.weight(i));
            }
            if !size.is_finite() {
                return Ok(None);
            }
            if size < 0.05 {
                if system.rhs(&y, &mut fy).is_err() {
                    return Ok(None);
                }
                return Ok(Some((y, fy)));
            }
            if size > previous {
                return Ok(None);
            }
            previous = size;
        }
        Ok(None)
    }

    /// Attempts steps until one of size at most `h_limit` is accepted.
    /// Returns the accepted step size.
    pub fn step<S: OdeSystem>(&mut self, system: &mut S, h_limit: f64) -> Result<f64> {
        let c = self.control;
        let restarting = self.f_prev.is_none();
        let mut h = self.h.min(h_limit).min(c.h_max);
        let floor = c.h_min.min(h_limit);
        let mut fresh_jacobian = false;
        if self.jac.is_none() {
            self.jacobian(system)?;
            fresh_jacobian = true;
        }
        loop {
            let n = self.x.len();
            let predictor: Vec<f64> = match &self.f_prev {
                Some((fp, hp)) => (0..n)
                    .map(|i| self.x[i] + h * (self.f[i] + 0.5 * h / hp * (self.f[i] - fp[i])))
                    .collect(),
                None => (0..n).map(|i| self.x[i] + h * self.f[i]).collect(),
            };
            let corrected = self.correct(system, h, predictor.clone())?;
            let Some((y, fy)) = corrected else {
                if !fresh_jacobian {
                    self.jacobian(system)?;
                    fresh_jacobian = true;
                    continue;
                }
                if h <= floor * (1.0 + 1e-9) {
                    return Err(Error::IntegrationAborted {
                        time: f64::NAN,
                        reason: "corrector failed at the minimum step size".into(),
                    });
                }
                self.stats.rejected += 1;
                h = (0.25 * h).max(c.h_min).min(h_limit);
                continue;
            };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationAborted {
                    time: f64::NAN,
                    reason: "non-finite state".into(),
                });
            }
            let err = if restarting {
                0.0
            } else {
                (0..n)
                    .map(|i| (y[i] - predictor[i]).abs() / 6.0 / self.weight(i))
                    .fold(0.0, f64::max)
            };
            if err <= 1.0 || h <= floor * (1.0 + 1e-9) {
                let factor = if err > 0.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 2.0) } else { 2.0 };
                let f_old = std::mem::replace(&mut self.f, fy);
                self.f_prev = Some((f_old, h));
                self.x = y;
                self.h = (h * factor).clamp(c.h_min, c.h_max);
                self.stats.accepted += 1;
                return Ok(h);
            }
            self.stats.rejected += 1;
            let factor = (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 0.9);
            h = (h * factor).max(c.h_min).min(h_limit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: DMatrix<f64>,
    }

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            self.a.nrows()
        }
        fn rhs(&mut self, x: &[f64], dx: &mut [f64]) -> Result<()> {
            let v = &self.a * DVector::from_column_slice(x);
            dx.copy_from_slice(v.as_slice());
            Ok(())
        }
    }

    fn integrate(sys: &mut Linear, x0: &[f64], t_end: f64, tol: f64) -> (Vec<f64>, IntegratorStats) {
        let control = StepControl { tolerance: tol, h_min: 1e-4, h_max: 0.05 };
        let mut integ = Trapezoidal::new(sys, x0, control).unwrap();
        let mut t = 0.0;
        while t < t_end - 1e-12 {
            t += integ.step(sys, t_end - t).unwrap();
        }
        (integ.state().to_vec(), integ.stats)
    }

    #[test]
    fn decay_matches_exponential() {
        let mut sys = Linear { a: DMatrix::from_row_slice(1, 1, &[-2.0]) };
        let (x, stats) = integrate(&mut sys, &[1.0], 3.0, 1e-6);
        let exact = (-6.0f64).exp();
        assert!((x[0] - exact).abs() < 1e-5, "{} vs {exact}", x[0]);
        assert!(stats.accepted > 10);
    }

    #[test]
    fn oscillator_error_shrinks_with_tolerance() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.2]);
        let exact_at = |t: f64| {
            // Underdamped: x'' + 0.2 x' + 4 x = 0, x(0) = 1, x'(0) = 0.
            let wd = (4.0f64 - 0.01).sqrt();
            (-0.1 * t).exp() * ((wd * t).cos() + 0.1 / wd * (wd * t).sin())
        };
        let mut sys = Linear { a: a.clone() };
        let (coarse, _) = integrate(&mut sys, &[1.0, 0.0], 5.0, 1e-4);
        let (fine, _) = integrate(&mut sys, &[1.0, 0.0], 5.0, 1e-7);
        let e_coarse = (coarse[0] - exact_at(5.0)).abs();
        let e_fine = (fine[0] - exact_at(5.0)).abs();
        assert!(e_fine < e_coarse);
        assert!(e_fine < 1e-4);
    }

    #[test]
    fn stiff_component_does_not_force_tiny_steps() {
        let mut sys = Linear { a: DMatrix::from_row_slice(2, 2, &[-1000.0, 0.0, 0.0, -1.0]) };
        let (x, stats) = integrate(&mut sys, &[1.0, 1.0], 5.0, 1e-6);
        assert!(x[0].abs() < 1e-6);
        assert!((x[1] - (-5.0f64).exp()).abs() < 1e-4);
        assert!(stats.accepted < 2000);
    }

    #[test]
    fn equilibrium_stays_put() {
        let mut sys = Linear { a: DMatrix::from_row_slice(1, 1, &[-3.0]) };
        let (x, _) = integrate(&mut sys, &[0.0], 2.0, 1e-6);
        assert_eq!(x[0], 0.0);
    }
}
