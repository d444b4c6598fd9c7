use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::devices::{AtlParams, DeviceParameters, IbgParams, ImParams};
use crate::error::{Error, Result};

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

impl From<[f64; 2]> for Range {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlRanges {
    pub tau_pll: Range,
    pub tau_p: Range,
    pub h: Range,
    pub b: Range,
    pub r_t: Range,
    pub l_t: Range,
    pub r_a: Range,
    pub f_atl: Range,
    pub load_factor: Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImRanges {
    pub r_s: Range,
    pub r_r: Range,
    pub l_m: Range,
    pub l_s: Range,
    pub l_r: Range,
    pub h: Range,
    pub load_factor: Range,
    pub power_factor: Range,
    pub f_im: Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbgRanges {
    pub tau_pll: Range,
    pub tau_i: Range,
    pub ramp: Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticRanges {
    pub alpha: Range,
    pub beta: Range,
}

/// Uniform sampling intervals of every uncertain device parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRanges {
    pub atl: AtlRanges,
    pub im: ImRanges,
    pub ibg: IbgRanges,
    pub static_load: StaticRanges,
}

impl Default for UncertaintyRanges {
    fn default() -> Self {
        Self {
            atl: AtlRanges {
                tau_pll: Range::new(0.05, 0.1),
                tau_p: Range::new(0.01, 0.03),
                h: Range::new(0.03, 0.5),
                b: Range::new(0.0005, 0.002),
                r_t: Range::new(0.005, 0.05),
                l_t: Range::new(0.1, 0.9),
                r_a: Range::new(0.01, 0.1),
                f_atl: Range::new(0.01, 0.4),
                load_factor: Range::new(0.3, 1.3),
            },
            im: ImRanges {
                r_s: Range::new(0.03, 0.13),
                r_r: Range::new(0.03, 0.13),
                l_m: Range::new(2.5, 4.0),
                l_s: Range::new(0.07, 0.15),
                l_r: Range::new(0.06, 0.15),
                h: Range::new(0.2, 1.0),
                load_factor: Range::new(0.4, 0.6),
                power_factor: Range::new(0.85, 0.95),
                f_im: Range::new(0.0, 0.2),
            },
            ibg: IbgRanges {
                tau_pll: Range::new(0.05, 0.1),
                tau_i: Range::new(0.01, 0.03),
                ramp: Range::new(0.2, 0.5),
            },
            static_load: StaticRanges {
                alpha: Range::new(1.0, 2.0),
                beta: Range::new(1.5, 3.0),
            },
        }
    }
}

impl UncertaintyRanges {
    fn named(&self) -> Vec<(&'static str, Range)> {
        let (a, m, g, s) = (&self.atl, &self.im, &self.ibg, &self.static_load);
        vec![
            ("atl.tau_pll", a.tau_pll),
            ("atl.tau_p", a.tau_p),
            ("atl.h", a.h),
            ("atl.b", a.b),
            ("atl.r_t", a.r_t),
            ("atl.l_t", a.l_t),
            ("atl.r_a", a.r_a),
            ("atl.f_atl", a.f_atl),
            ("atl.load_factor", a.load_factor),
            ("im.r_s", m.r_s),
            ("im.r_r", m.r_r),
            ("im.l_m", m.l_m),
            ("im.l_s", m.l_s),
            ("im.l_r", m.l_r),
            ("im.h", m.h),
            ("im.load_factor", m.load_factor),
            ("im.power_factor", m.power_factor),
            ("im.f_im", m.f_im),
            ("ibg.tau_pll", g.tau_pll),
            ("ibg.tau_i", g.tau_i),
            ("ibg.ramp", g.ramp),
            ("static.alpha", s.alpha),
            ("static.beta", s.beta),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.named() {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(Error::InvalidParameter(format!(
                    "range of {name} is not an interval: [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        let strictly_positive = [
            "atl.tau_pll", "atl.tau_p", "atl.h", "atl.load_factor", "im.l_m", "im.l_s", "im.l_r",
            "im.h", "im.load_factor", "ibg.tau_pll", "ibg.tau_i", "ibg.ramp",
        ];
        for (name, r) in self.named() {
            if strictly_positive.contains(&name) && !(r.min > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
            if !strictly_positive.contains(&name) && r.min < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative")));
            }
        }
        if !(self.im.power_factor.max <= 1.0) {
            return Err(Error::InvalidParameter("im.power_factor must not exceed 1".into()));
        }
        if self.im.f_im.max + self.atl.f_atl.max > 1.0 {
            return Err(Error::InvalidParameter(
                "motor and thermal load shares may exceed the nodal load".into(),
            ));
        }
        Ok(())
    }

    /// Every sampled value lies in its interval.
    pub fn contains(&self, p: &DeviceParameters) -> bool {
        let values = [
            p.atl.tau_pll, p.atl.tau_p, p.atl.h, p.atl.b, p.atl.r_t, p.atl.l_t, p.atl.r_a,
            p.f_atl, p.atl.load_factor, p.im.r_s, p.im.r_r, p.im.l_m, p.im.l_s, p.im.l_r,
            p.im.h, p.im.load_factor, p.im.power_factor, p.f_im, p.ibg.tau_pll, p.ibg.tau_i,
            p.ibg.ramp, p.alpha, p.beta,
        ];
        self.named().iter().zip(values).all(|((_, r), x)| r.contains(x))
    }

    /// One independent uniform draw of every parameter.
    fn draw(&self, rng: &mut ChaCha8Rng, i_max: f64) -> DeviceParameters {
        let (a, m, g, s) = (&self.atl, &self.im, &self.ibg, &self.static_load);
        let atl = AtlParams {
            tau_pll: a.tau_pll.draw(rng),
            tau_p: a.tau_p.draw(rng),
            h: a.h.draw(rng),
            b: a.b.draw(rng),
            r_t: a.r_t.draw(rng),
            l_t: a.l_t.draw(rng),
            r_a: a.r_a.draw(rng),
            load_factor: 0.0,
        };
        let f_atl = a.f_atl.draw(rng);
        let atl = AtlParams { load_factor: a.load_factor.draw(rng), ..atl };
        let im = ImParams {
            r_s: m.r_s.draw(rng),
            r_r: m.r_r.draw(rng),
            l_m: m.l_m.draw(rng),
            l_s: m.l_s.draw(rng),
            l_r: m.l_r.draw(rng),
            h: m.h.draw(rng),
            load_factor: m.load_factor.draw(rng),
            power_factor: m.power_factor.draw(rng),
        };
        let f_im = m.f_im.draw(rng);
        let ibg = IbgParams {
            tau_pll: g.tau_pll.draw(rng),
            tau_i: g.tau_i.draw(rng),
            ramp: g.ramp.draw(rng),
            i_max,
        };
        DeviceParameters {
            alpha: s.alpha.draw(rng),
            beta: s.beta.draw(rng),
            f_im,
            im,
            f_atl,
            atl,
            ibg,
        }
    }
}

/// Whether one draw is shared by every bus of a parameter set or each bus
/// gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    PerSet,
    PerDevice,
}

/// One realization of the feeder's uncertain parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSample {
    pub id: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Parameters per bus, in network bus order.
    pub buses: Vec<DeviceParameters>,
}

/// Current limit of the generation units (not uncertain).
pub const IBG_CURRENT_LIMIT: f64 = 1.1;

/// Draws one parameter set from `seed`.
pub fn sample_parameters(
    id: usize,
    seed: u64,
    ranges: &UncertaintyRanges,
    n_buses: usize,
    mode: SamplingMode,
) -> Result<ParameterSample> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses = match mode {
        SamplingMode::PerSet => vec![ranges.draw(&mut rng, IBG_CURRENT_LIMIT); n_buses],
        SamplingMode::PerDevice => {
            (0..n_buses).map(|_| ranges.draw(&mut rng, IBG_CURRENT_LIMIT)).collect()
        }
    };
    Ok(ParameterSample { id, seed, mode, buses })
}

/// Seed of parameter set `id` under `master` (SplitMix64 finalizer).
pub fn set_seed(master: u64, id: usize) -> u64 {
    let mut z = master
        .wrapping_add((id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_contain_mid_values() {
        let r = UncertaintyRanges::default();
        r.validate().unwrap();
        assert!(r.contains(&DeviceParameters::default()));
        assert_eq!(r.atl.tau_pll, Range::new(0.05, 0.1));
        assert_eq!(r.ibg.ramp, Range::new(0.2, 0.5));
    }

    #[test]
    fn pll_delay_draws_are_uniform() {
        let r = UncertaintyRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| r.draw(&mut rng, 1.1).atl.tau_pll).collect();
        assert!(draws.iter().all(|&x| (0.05..=0.1).contains(&x)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.075).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn degenerate_range_is_constant() {
        let mut r = UncertaintyRanges::default();
        r.static_load.alpha = Range::new(1.7, 1.7);
        for seed in 0..20 {
            let s = sample_parameters(0, seed, &r, 3, SamplingMode::PerDevice).unwrap();
            assert!(s.buses.iter().all(|p| p.alpha == 1.7));
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let r = UncertaintyRanges::default();
        let a = sample_parameters(3, 42, &r, 19, SamplingMode::PerDevice).unwrap();
        let b = sample_parameters(3, 42, &r, 19, SamplingMode::PerDevice).unwrap();
        assert_eq!(a, b);
        let c = sample_parameters(3, 43, &r, 19, SamplingMode::PerDevice).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn per_set_mode_shares_one_draw() {
        let r = UncertaintyRanges::default();
        let s = sample_parameters(0, 5, &r, 19, SamplingMode::PerSet).unwrap();
        assert!(s.buses.windows(2).all(|w| w[0] == w[1]));
        let d = sample_parameters(0, 5, &r, 19, SamplingMode::PerDevice).unwrap();
        assert!(d.buses.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn inverted_range_rejected() {
        let mut r = UncertaintyRanges::default();
        r.im.h = Range::new(1.0, 0.2);
        assert!(r.validate().is_err());
        let mut r = UncertaintyRanges::default();
        r.atl.f_atl = Range::new(0.5, 0.9);
        assert!(r.validate().is_err());
    }

    #[test]
    fn ranges_round_trip_as_pairs() {
        let r = UncertaintyRanges::default();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"tau_pll\":[0.05,0.1]"));
        let back: UncertaintyRanges = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn set_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| set_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
