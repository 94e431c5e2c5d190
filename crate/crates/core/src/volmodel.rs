//! Deterministic volatility functions `sigma^2(t)` on `[0, 1]` and the
//! functionals the estimators consume: point values, power integrals
//! `int sigma^p` and the cumulative variance `a(t) = int_0^t sigma^2`.
//!
//! JSON schema (field `kind` selects the variant):
//!
//! ```json
//! {"kind": "constant", "level": 1.0}
//! {"kind": "piecewise_constant", "values": [1.0, 4.0]}
//! {"kind": "sinusoid", "base": 1.0, "amplitude": 0.5, "cycles": 1, "phase": 0.0}
//! {"kind": "oscillating", "n": 16}
//! ```
//!
//! `sinusoid` means `base + amplitude * sin(2 pi cycles t + phase)`;
//! `oscillating` means `1 + n^{-1/4} cos(pi n t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quad::{adaptive_simpson, cos_pi, sin_pi};

/// Absolute tolerance of the adaptive quadrature behind [`VolatilitySpec::integrated_power`].
pub const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolatilitySpec {
    Constant {
        level: f64,
    },
    /// One variance level per block of width `1 / values.len()`.
    PiecewiseConstant {
        values: Vec<f64>,
    },
    Sinusoid {
        base: f64,
        amplitude: f64,
        cycles: u32,
        phase: f64,
    },
    Oscillating {
        n: u64,
    },
}

impl VolatilitySpec {
    pub fn constant(level: f64) -> Result<Self> {
        let s = VolatilitySpec::Constant { level };
        s.validate()?;
        Ok(s)
    }

    pub fn piecewise_constant(values: Vec<f64>) -> Result<Self> {
        let s = VolatilitySpec::PiecewiseConstant { values };
        s.validate()?;
        Ok(s)
    }

    pub fn sinusoid(base: f64, amplitude: f64, cycles: u32, phase: f64) -> Result<Self> {
        let s = VolatilitySpec::Sinusoid {
            base,
            amplitude,
            cycles,
            phase,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn oscillating(n: u64) -> Result<Self> {
        let s = VolatilitySpec::Oscillating { n };
        s.validate()?;
        Ok(s)
    }

    /// Checks that `sigma^2` is finite and bounded away from zero on `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        match self {
            VolatilitySpec::Constant { level } => {
                if !(level.is_finite() && *level > 0.0) {
                    return domain(format!("constant level must be positive, got {level}"));
                }
            }
            VolatilitySpec::PiecewiseConstant { values } => {
                if values.is_empty() {
                    return domain("piecewise_constant needs at least one block");
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return domain(format!("piecewise_constant values must be positive, got {v}"));
                }
            }
            VolatilitySpec::Sinusoid {
                base,
                amplitude,
                phase,
                ..
            } => {
                if !(base.is_finite() && amplitude.is_finite() && phase.is_finite()) {
                    return domain("sinusoid parameters must be finite");
                }
                if base - amplitude.abs() <= 0.0 {
                    return domain(format!(
                        "sinusoid minimum base - |amplitude| = {} must be positive",
                        base - amplitude.abs()
                    ));
                }
            }
            VolatilitySpec::Oscillating { n } => {
                if *n < 2 {
                    return domain(format!("oscillating requires n >= 2, got {n}"));
                }
            }
        }
        Ok(())
    }

    /// Smallest value of `sigma^2` on `[0, 1]`.
    pub fn min_sigma2(&self) -> f64 {
        match self {
            VolatilitySpec::Constant { level } => *level,
            VolatilitySpec::PiecewiseConstant { values } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
            VolatilitySpec::Sinusoid {
                base, amplitude, cycles, ..
            } => {
                if *cycles == 0 {
                    self.sigma2_unchecked(0.0)
                } else {
                    base - amplitude.abs()
                }
            }
            VolatilitySpec::Oscillating { n } => 1.0 - (*n as f64).powf(-0.25),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            VolatilitySpec::Constant { .. } => true,
            VolatilitySpec::PiecewiseConstant { values } => values.iter().all(|v| *v == values[0]),
            VolatilitySpec::Sinusoid {
                amplitude, cycles, ..
            } => *amplitude == 0.0 || *cycles == 0,
            VolatilitySpec::Oscillating { .. } => false,
        }
    }

    /// `sigma^2(t)` for `t` in `[0, 1]`.
    pub fn eval_sigma2(&self, t: f64) -> Result<f64> {
        check_unit(t)?;
        Ok(self.sigma2_unchecked(t))
    }

    pub(crate) fn sigma2_unchecked(&self, t: f64) -> f64 {
        match self {
            VolatilitySpec::Constant { level } => *level,
            VolatilitySpec::PiecewiseConstant { values } => values[block_of(t, values.len())],
            VolatilitySpec::Sinusoid {
                base,
                amplitude,
                cycles,
                phase,
            } => base + amplitude * (2.0 * PI * f64::from(*cycles) * t + phase).sin(),
            VolatilitySpec::Oscillating { n } => {
                let n = *n as f64;
                1.0 + n.powf(-0.25) * cos_pi(n * t)
            }
        }
    }

    /// `int_a^b sigma^p(t) dt`, where `p` is the exponent on `sigma` (so `p = 2`
    /// integrates the variance).
    pub fn integrated_power(&self, p: f64, a: f64, b: f64) -> Result<f64> {
        if !(p.is_finite() && p > 0.0) {
            return domain(format!("power exponent must be positive, got {p}"));
        }
        check_unit(a)?;
        check_unit(b)?;
        if a > b {
            return domain(format!("integration bounds reversed: a = {a} > b = {b}"));
        }
        let half = 0.5 * p;
        Ok(match self {
            VolatilitySpec::Constant { level } => level.powf(half) * (b - a),
            VolatilitySpec::PiecewiseConstant { values } => {
                let w = 1.0 / values.len() as f64;
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let lo = (i as f64 * w).max(a);
                        let hi = ((i + 1) as f64 * w).min(b);
                        if hi > lo {
                            v.powf(half) * (hi - lo)
                        } else {
                            0.0
                        }
                    })
                    .sum()
            }
            _ if p == 2.0 => self.a_unchecked(b) - self.a_unchecked(a),
            VolatilitySpec::Sinusoid { cycles, .. } => {
                let pieces = ((16.0 * f64::from((*cycles).max(1)) * (b - a)).ceil() as usize).max(1);
                adaptive_simpson(&|t| self.sigma2_unchecked(t).powf(half), a, b, QUAD_TOL, pieces)
            }
            VolatilitySpec::Oscillating { n } => {
                let pieces = ((2.0 * *n as f64 * (b - a)).ceil() as usize).max(1);
                adaptive_simpson(&|t| self.sigma2_unchecked(t).powf(half), a, b, QUAD_TOL, pieces)
            }
        })
    }

    /// Cumulative variance `a(t)`; for `t` in `(1, 2]` the reflection
    /// `a(1 + s) = a(1 - s)` is applied.
    pub fn cumulative_variance(&self, t: f64) -> Result<f64> {
        if !(0.0..=2.0).contains(&t) {
            return domain(format!("cumulative variance argument {t} outside [0, 2]"));
        }
        Ok(self.a_unchecked(reflect(t)))
    }

    pub(crate) fn a_unchecked(&self, t: f64) -> f64 {
        match self {
            VolatilitySpec::Constant { level } => level * t,
            VolatilitySpec::PiecewiseConstant { values } => {
                let l = values.len();
                let w = 1.0 / l as f64;
                let b = block_of(t, l);
                let full: f64 = values[..b].iter().sum::<f64>() * w;
                full + values[b] * (t - b as f64 * w)
            }
            VolatilitySpec::Sinusoid {
                base,
                amplitude,
                cycles,
                phase,
            } => {
                if *cycles == 0 {
                    return (base + amplitude * phase.sin()) * t;
                }
                let omega = 2.0 * PI * f64::from(*cycles);
                base * t + amplitude * (phase.cos() - (omega * t + phase).cos()) / omega
            }
            VolatilitySpec::Oscillating { n } => {
                let n = *n as f64;
                t + n.powf(-0.25) * sin_pi(n * t) / (PI * n)
            }
        }
    }

    /// `int_0^t a(s) ds` for `t` in `[0, 1]`, in closed form.
    pub(crate) fn a_integral_unchecked(&self, t: f64) -> f64 {
        match self {
            VolatilitySpec::Constant { level } => 0.5 * level * t * t,
            VolatilitySpec::PiecewiseConstant { values } => {
                let l = values.len();
                let w = 1.0 / l as f64;
                let b = block_of(t, l);
                let mut acc = 0.0;
                let mut a_left = 0.0;
                for v in &values[..b] {
                    acc += a_left * w + 0.5 * v * w * w;
                    a_left += v * w;
                }
                let s = t - b as f64 * w;
                acc + a_left * s + 0.5 * values[b] * s * s
            }
            VolatilitySpec::Sinusoid {
                base,
                amplitude,
                cycles,
                phase,
            } => {
                if *cycles == 0 {
                    return 0.5 * (base + amplitude * phase.sin()) * t * t;
                }
                let omega = 2.0 * PI * f64::from(*cycles);
                0.5 * base * t * t
                    + amplitude / omega
                        * (phase.cos() * t - ((omega * t + phase).sin() - phase.sin()) / omega)
            }
            VolatilitySpec::Oscillating { n } => {
                let n = *n as f64;
                0.5 * t * t + n.powf(-0.25) * (1.0 - cos_pi(n * t)) / (PI * n).powi(2)
            }
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("time {t} outside [0, 1]"));
    }
    Ok(())
}

fn reflect(t: f64) -> f64 {
    if t > 1.0 {
        2.0 - t
    } else {
        t
    }
}

fn block_of(t: f64, blocks: usize) -> usize {
    ((t * blocks as f64).floor() as usize).min(blocks - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::midpoint_sum;

    fn sinus() -> VolatilitySpec {
        VolatilitySpec::sinusoid(1.0, 0.5, 1, 0.0).unwrap()
    }

    #[test]
    fn point_values() {
        let c = VolatilitySpec::constant(1.0).unwrap();
        assert_eq!(c.eval_sigma2(0.37).unwrap(), 1.0);
        let o = VolatilitySpec::oscillating(16).unwrap();
        assert!((o.eval_sigma2(0.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((sinus().eval_sigma2(0.25).unwrap() - 1.5).abs() < 1e-15);
        assert!(c.eval_sigma2(1.1).is_err());
        assert!(c.eval_sigma2(-0.1).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(VolatilitySpec::constant(0.0).is_err());
        assert!(VolatilitySpec::piecewise_constant(vec![]).is_err());
        assert!(VolatilitySpec::piecewise_constant(vec![1.0, -1.0]).is_err());
        assert!(VolatilitySpec::sinusoid(1.0, 1.0, 1, 0.0).is_err());
        assert!(VolatilitySpec::oscillating(1).is_err());
    }

    #[test]
    fn power_integrals_closed_form() {
        let c = VolatilitySpec::constant(1.0).unwrap();
        assert_eq!(c.integrated_power(3.0, 0.0, 1.0).unwrap(), 1.0);
        let pc = VolatilitySpec::piecewise_constant(vec![1.0, 4.0]).unwrap();
        assert!((pc.integrated_power(2.0, 0.0, 1.0).unwrap() - 2.5).abs() < 1e-15);
        assert!((pc.integrated_power(3.0, 0.0, 1.0).unwrap() - 4.5).abs() < 1e-15);
        assert!(c.integrated_power(2.0, 0.6, 0.4).is_err());
    }

    #[test]
    fn sinusoid_cubic_power_matches_riemann_oracle() {
        let s = sinus();
        let oracle = midpoint_sum(|t| s.sigma2_unchecked(t).powf(1.5), 0.0, 1.0, 10_000_000);
        let v = s.integrated_power(3.0, 0.0, 1.0).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
    }

    #[test]
    fn cumulative_variance_and_reflection() {
        let c = VolatilitySpec::constant(2.0).unwrap();
        assert!((c.cumulative_variance(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((c.cumulative_variance(1.2).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(sinus().cumulative_variance(0.0).unwrap(), 0.0);
        assert!(c.cumulative_variance(2.1).is_err());
        assert!(c.cumulative_variance(-0.1).is_err());
    }

    #[test]
    fn oscillating_cells_carry_exactly_one_over_n() {
        for n in [16u64, 256, 4096] {
            let o = VolatilitySpec::oscillating(n).unwrap();
            for i in 1..=n {
                let lo = (i - 1) as f64 / n as f64;
                let hi = i as f64 / n as f64;
                let cell = o.integrated_power(2.0, lo, hi).unwrap();
                assert!((cell - 1.0 / n as f64).abs() < 1e-14, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn a_integral_matches_quadrature() {
        let specs = [
            VolatilitySpec::piecewise_constant(vec![1.0, 4.0, 2.0]).unwrap(),
            sinus(),
            VolatilitySpec::oscillating(8).unwrap(),
        ];
        for s in &specs {
            for t in [0.1, 0.5, 0.77, 1.0] {
                let q = adaptive_simpson(&|u| s.a_unchecked(u), 0.0, t, 1e-13, 64);
                assert!((s.a_integral_unchecked(t) - q).abs() < 1e-11, "{s:?} t={t}");
            }
        }
    }

    #[test]
    fn jensen_gap() {
        let c = VolatilitySpec::constant(3.0).unwrap();
        let q4 = c.integrated_power(4.0, 0.0, 1.0).unwrap();
        let q3 = c.integrated_power(3.0, 0.0, 1.0).unwrap();
        assert!((q4 - q3.powf(4.0 / 3.0)).abs() < 1e-12);
        for s in [
            sinus(),
            VolatilitySpec::piecewise_constant(vec![1.0, 4.0]).unwrap(),
            VolatilitySpec::oscillating(64).unwrap(),
        ] {
            let q4 = s.integrated_power(4.0, 0.0, 1.0).unwrap();
            let q3 = s.integrated_power(3.0, 0.0, 1.0).unwrap();
            assert!(q4 > q3.powf(4.0 / 3.0), "{s:?}");
        }
    }

    #[test]
    fn json_schema() {
        let s: VolatilitySpec =
            serde_json::from_str(r#"{"kind":"sinusoid","base":1.0,"amplitude":0.5,"cycles":1,"phase":0.0}"#)
                .unwrap();
        assert_eq!(s, sinus());
        let txt = serde_json::to_string(&VolatilitySpec::piecewise_constant(vec![1.0, 4.0]).unwrap()).unwrap();
        assert_eq!(txt, r#"{"kind":"piecewise_constant","values":[1.0,4.0]}"#);
        assert!(serde_json::from_str::<VolatilitySpec>(r#"{"kind":"constant","lvl":1}"#).is_err());
    }
}
