use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A threshold that trips the unit when violated continuously for `delay` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub threshold: f64,
    pub delay: f64,
}

/// Grid-support and protection settings shared by thermal loads and
/// inverter-based generation. Frequencies in Hz, voltages in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtectionSettings {
    pub under_voltage: Vec<Stage>,
    pub over_voltage: Vec<Stage>,
    pub under_frequency: Vec<Stage>,
    pub over_frequency: Vec<Stage>,
    /// Generation starts curtailing above this frequency...
    pub fw_knee_hz: f64,
    /// ...and reaches zero output here.
    pub fw_zero_hz: f64,
    /// Thermal loads start shedding below this frequency...
    pub uf_knee_hz: f64,
    /// ...and draw nothing here.
    pub uf_zero_hz: f64,
    /// Reactive current (p.u. of unit rating, positive = injection) versus
    /// voltage deviation from the pre-disturbance value; piecewise linear,
    /// flat beyond the end points.
    pub volt_var: Vec<(f64, f64)>,
}

impl Default for ProtectionSettings {
    fn default() -> Self {
        Self {
            under_voltage: vec![
                Stage { threshold: 0.8, delay: 2.0 },
                Stage { threshold: 0.5, delay: 0.1 },
            ],
            over_voltage: vec![Stage { threshold: 1.15, delay: 0.2 }],
            under_frequency: vec![Stage { threshold: 47.0, delay: 0.1 }],
            over_frequency: vec![Stage { threshold: 52.0, delay: 0.1 }],
            fw_knee_hz: 50.25,
            fw_zero_hz: 52.0,
            uf_knee_hz: 49.75,
            uf_zero_hz: 48.0,
            volt_var: vec![(-0.2, 0.4), (-0.02, 0.0), (0.02, 0.0), (0.2, -0.4)],
        }
    }
}

impl ProtectionSettings {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let settings: Self = serde_json::from_str(&text)?;
        settings.validate(50.0)?;
        Ok(settings)
    }

    pub fn validate(&self, f_n: f64) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("protection: {what}")));
        let all = self
            .under_voltage
            .iter()
            .chain(&self.over_voltage)
            .chain(&self.under_frequency)
            .chain(&self.over_frequency);
        if all.clone().any(|s| s.delay < 0.0) {
            return bad("negative delay");
        }
        if self.under_voltage.iter().any(|s| s.threshold >= 1.0)
            || self.over_voltage.iter().any(|s| s.threshold <= 1.0)
        {
            return bad("voltage thresholds must bracket 1 p.u.");
        }
        if self.under_frequency.iter().any(|s| s.threshold >= f_n)
            || self.over_frequency.iter().any(|s| s.threshold <= f_n)
        {
            return bad("frequency thresholds must bracket the nominal frequency");
        }
        if !(self.fw_knee_hz < self.fw_zero_hz) || !(self.uf_zero_hz < self.uf_knee_hz) {
            return bad("droop knee and zero point are inverted");
        }
        if self.volt_var.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("volt-var points must have increasing abscissae");
        }
        Ok(())
    }

    /// Multiplier on available generation, 1 up to the knee, 0 at the zero point.
    pub fn frequency_watt(&self, f_hz: f64) -> f64 {
        ((self.fw_zero_hz - f_hz) / (self.fw_zero_hz - self.fw_knee_hz)).clamp(0.0, 1.0)
    }

    /// Multiplier on thermal load consumption under low frequency.
    pub fn under_frequency_shedding(&self, f_hz: f64) -> f64 {
        ((f_hz - self.uf_zero_hz) / (self.uf_knee_hz - self.uf_zero_hz)).clamp(0.0, 1.0)
    }

    pub fn reactive_support(&self, dv: f64) -> f64 {
        let pts = &self.volt_var;
        match pts.len() {
            0 => 0.0,
            1 => pts[0].1,
            _ => {
                if dv <= pts[0].0 {
                    return pts[0].1;
                }
                for w in pts.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if dv <= x1 {
                        return y0 + (y1 - y0) * (dv - x0) / (x1 - x0);
                    }
                }
                pts[pts.len() - 1].1
            }
        }
    }

    fn stages(&self) -> impl Iterator<Item = (Kind, &Stage)> {
        self.under_voltage
            .iter()
            .map(|s| (Kind::UnderVoltage, s))
            .chain(self.over_voltage.iter().map(|s| (Kind::OverVoltage, s)))
            .chain(self.under_frequency.iter().map(|s| (Kind::UnderFrequency, s)))
            .chain(self.over_frequency.iter().map(|s| (Kind::OverFrequency, s)))
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    UnderVoltage,
    OverVoltage,
    UnderFrequency,
    OverFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Connected,
    Tripped,
}

/// Per-stage violation timers plus the latched trip flag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtectionMonitor {
    timers: Vec<f64>,
    tripped: bool,
}

impl ProtectionMonitor {
    pub fn new(settings: &ProtectionSettings) -> Self {
        Self {
            timers: vec![0.0; settings.stages().count()],
            tripped: false,
        }
    }

    pub fn is_tripped(&self) -> bool {
        self.tripped
    }

    /// Advances the timers by `dt` with the measurements held over the
    /// interval and returns the (latched) status.
    pub fn update(&mut self, v: f64, f_hz: f64, dt: f64, settings: &ProtectionSettings) -> Status {
        if self.tripped {
            return Status::Tripped;
        }
        if self.timers.len() != settings.stages().count() {
            self.timers = vec![0.0; settings.stages().count()];
        }
        for (timer, (kind, stage)) in self.timers.iter_mut().zip(settings.stages()) {
            let violated = match kind {
                Kind::UnderVoltage => v < stage.threshold,
                Kind::OverVoltage => v > stage.threshold,
                Kind::UnderFrequency => f_hz < stage.threshold,
                Kind::OverFrequency => f_hz > stage.threshold,
            };
            if violated {
                *timer += dt;
                if *timer >= stage.delay - 1e-12 {
                    self.tripped = true;
                }
            } else {
                *timer = 0.0;
            }
        }
        if self.tripped {
            Status::Tripped
        } else {
            Status::Connected
        }
    }
}

/// Runs a monitor over a sampled measurement record `(v, f_hz, dt)`.
pub fn check_protection(
    measurements: &[(f64, f64, f64)],
    settings: &ProtectionSettings,
) -> Status {
    let mut monitor = ProtectionMonitor::new(settings);
    let mut status = Status::Connected;
    for &(v, f, dt) in measurements {
        status = monitor.update(v, f, dt, settings);
    }
    status
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hold(v: f64, f: f64, seconds: f64) -> Vec<(f64, f64, f64)> {
        let dt = 0.01;
        let n = (seconds / dt).round() as usize;
        vec![(v, f, dt); n]
    }

    #[test]
    fn short_dip_stays_connected() {
        let s = ProtectionSettings::default();
        let mut m = hold(0.7, 50.0, 1.5);
        m.extend(hold(1.0, 50.0, 5.0));
        assert_eq!(check_protection(&m, &s), Status::Connected);
    }

    #[test]
    fn sustained_over_frequency_trips() {
        let s = ProtectionSettings::default();
        assert_eq!(check_protection(&hold(1.0, 52.2, 0.1), &s), Status::Tripped);
        assert_eq!(check_protection(&hold(1.0, 52.2, 0.05), &s), Status::Connected);
    }

    #[test]
    fn trip_latches() {
        let s = ProtectionSettings::default();
        let mut mon = ProtectionMonitor::new(&s);
        for _ in 0..20 {
            mon.update(0.4, 50.0, 0.01, &s);
        }
        assert!(mon.is_tripped());
        assert_eq!(mon.update(1.0, 50.0, 0.01, &s), Status::Tripped);
    }

    #[test]
    fn asymmetric_settings_give_asymmetric_outcomes() {
        let s = ProtectionSettings {
            under_frequency: vec![Stage { threshold: 48.0, delay: 0.1 }],
            over_frequency: vec![Stage { threshold: 52.5, delay: 0.1 }],
            ..Default::default()
        };
        let excursion = 2.2;
        let under = check_protection(&hold(1.0, 50.0 - excursion, 0.5), &s);
        let over = check_protection(&hold(1.0, 50.0 + excursion, 0.5), &s);
        assert_eq!(under, Status::Tripped);
        assert_eq!(over, Status::Connected);
    }

    #[test]
    fn droop_curves() {
        let s = ProtectionSettings::default();
        assert_eq!(s.frequency_watt(50.0), 1.0);
        assert!((s.frequency_watt(51.125) - 0.5).abs() < 1e-12);
        assert_eq!(s.frequency_watt(53.0), 0.0);
        assert_eq!(s.under_frequency_shedding(50.0), 1.0);
        assert!((s.under_frequency_shedding(48.875) - 0.5).abs() < 1e-12);
        assert_eq!(s.reactive_support(0.0), 0.0);
        assert!((s.reactive_support(-0.11) - 0.2).abs() < 1e-12);
        assert_eq!(s.reactive_support(0.5), -0.4);
    }

    #[test]
    fn validation() {
        let s = ProtectionSettings::default();
        assert!(s.validate(50.0).is_ok());
        let bad = ProtectionSettings {
            over_frequency: vec![Stage { threshold: 49.0, delay: 0.1 }],
            ..Default::default()
        };
        assert!(bad.validate(50.0).is_err());
        let bad = ProtectionSettings {
            under_voltage: vec![Stage { threshold: 0.8, delay: -1.0 }],
            ..Default::default()
        };
        assert!(bad.validate(50.0).is_err());
    }
}
