//! Fisher information of the block Gaussian scale family
//! `P_theta = prod_j N(0, theta + h0^-2 pi^2 j^2)` and the closed-form series
//! `sum_{j>=1} lambda^3 / (lambda^2 + pi^2 j^2)^2` behind it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quad::golden_section_max;

/// Below this `lambda` the closed forms lose digits to cancellation and a
/// power series in `lambda^2` is used instead.
const SMALL_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherQuery {
    pub theta: f64,
    pub h0: f64,
    /// Truncation for brute-force sums.
    #[serde(default)]
    pub jmax: Option<usize>,
}

impl FisherQuery {
    pub fn new(theta: f64, h0: f64) -> Result<Self> {
        let q = FisherQuery { theta, h0, jmax: None };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return domain(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.h0.is_finite() && self.h0 > 0.0) {
            return domain(format!("h0 must be positive, got {}", self.h0));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.theta.sqrt() * self.h0
    }
}

/// `zeta(s) / pi^s` for even `s >= 4`.
fn zeta_over_pi_pow(s: i32) -> f64 {
    match s {
        4 => 1.0 / 90.0,
        6 => 1.0 / 945.0,
        8 => 1.0 / 9450.0,
        10 => 1.0 / 93555.0,
        _ => {
            let z: f64 = (1..=40).rev().map(|j| (j as f64).powi(-s)).sum();
            z / PI.powi(s)
        }
    }
}

/// `sum_j lambda^3/(lambda^2+pi^2 j^2)^2 = lambda^3 sum_m (-1)^m (m+1) lambda^{2m} zeta(2m+4)/pi^{2m+4}`.
fn series_small(lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let mut acc = 0.0;
    let mut pow = 1.0;
    for m in 0..40 {
        let term = (m as f64 + 1.0) * pow * zeta_over_pi_pow(2 * m + 4);
        acc += if m % 2 == 0 { term } else { -term };
        if term < 1e-18 * acc.abs() {
            break;
        }
        pow *= l2;
    }
    lambda * l2 * acc
}

/// `sum_{j>=1} lambda^3 / (lambda^2 + pi^2 j^2)^2` in closed form:
/// `(1 + 4 lambda e^{-2 lambda} - e^{-4 lambda}) / (4 (1 - e^{-2 lambda})^2) - 1 / (2 lambda)`.
pub fn series_identity_closed(lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    if lambda < SMALL_LAMBDA {
        return Ok(series_small(lambda));
    }
    let x = (-2.0 * lambda).exp();
    let u = -(-2.0 * lambda).exp_m1();
    let num = u * (2.0 - u) + 4.0 * lambda * x;
    Ok(num / (4.0 * u * u) - 1.0 / (2.0 * lambda))
}

/// Partial sum `sum_{j=1}^{jmax} lambda^3/(lambda^2+pi^2 j^2)^2`, smallest terms first.
pub fn series_partial_sum(lambda: f64, jmax: usize) -> f64 {
    let l2 = lambda * lambda;
    let l3 = l2 * lambda;
    (1..=jmax)
        .rev()
        .map(|j| {
            let d = l2 + PI * PI * (j * j) as f64;
            l3 / (d * d)
        })
        .sum()
}

/// Fisher information `I(theta) = sum_j 1 / (2 (theta + h0^-2 pi^2 j^2)^2)`,
/// evaluated as
/// `h0 / (8 theta^{3/2}) [(1 + 4 L e^{-2L} - e^{-4L}) / (1 - e^{-2L})^2 - 2 / L]`, `L = sqrt(theta) h0`.
pub fn fisher_info(q: &FisherQuery) -> Result<f64> {
    q.validate()?;
    let lam = q.lambda();
    if lam < SMALL_LAMBDA {
        return Ok(q.h0.powi(4) / (2.0 * lam.powi(3)) * series_small(lam));
    }
    let x = (-2.0 * lam).exp();
    let u = -(-2.0 * lam).exp_m1();
    let bracket = (1.0 + 4.0 * lam * x - x * x) / (u * u) - 2.0 / lam;
    Ok(q.h0 / (8.0 * q.theta.powf(1.5)) * bracket)
}

/// Truncated sum `sum_{j=1}^{jmax} 1 / (2 (theta + h0^-2 pi^2 j^2)^2)`.
pub fn fisher_info_sum(theta: f64, h0: f64, jmax: usize) -> f64 {
    (1..=jmax)
        .rev()
        .map(|j| {
            let d = theta + PI * PI * (j * j) as f64 / (h0 * h0);
            0.5 / (d * d)
        })
        .sum()
}

/// Information per unit noise level when only the first frequency is used:
/// `I_{h0} = (2 h0)^-1 h0^4 / (pi^2 + h0^2 sigma0^2)^2`.
pub fn single_frequency_info(sigma0: f64, h0: f64) -> Result<f64> {
    if !(sigma0.is_finite() && sigma0 > 0.0 && h0.is_finite() && h0 > 0.0) {
        return domain(format!("sigma0 and h0 must be positive, got {sigma0}, {h0}"));
    }
    let d = PI * PI + h0 * h0 * sigma0 * sigma0;
    Ok(h0.powi(3) / (2.0 * d * d))
}

/// Closed-form maximiser `sqrt(3) pi / sigma0` of [`single_frequency_info`].
pub fn optimal_single_frequency_h0(sigma0: f64) -> f64 {
    3f64.sqrt() * PI / sigma0
}

/// Numerical maximiser of `single_frequency_info` over `[lo, hi]`.
pub fn argmax_single_frequency_h0(sigma0: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(sigma0 > 0.0 && lo > 0.0 && hi > lo) {
        return domain("argmax needs sigma0 > 0 and 0 < lo < hi");
    }
    Ok(golden_section_max(
        |h0| single_frequency_info(sigma0, h0).unwrap_or(f64::NEG_INFINITY),
        lo,
        hi,
        tol,
    ))
}

/// Efficient information bound `sigma0^-3 / 8`.
pub fn efficiency_bound(sigma0: f64) -> Result<f64> {
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return domain(format!("sigma0 must be positive, got {sigma0}"));
    }
    Ok(sigma0.powi(-3) / 8.0)
}

/// One row of the Fisher information table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherRow {
    pub theta: f64,
    pub h0: f64,
    pub i_closed: f64,
    pub i_sum: f64,
    pub rel_err: f64,
}

pub fn fisher_row(theta: f64, h0: f64, jmax: usize) -> Result<FisherRow> {
    let i_closed = fisher_info(&FisherQuery::new(theta, h0)?)?;
    let i_sum = fisher_info_sum(theta, h0, jmax);
    Ok(FisherRow {
        theta,
        h0,
        i_closed,
        i_sum,
        rel_err: ((i_closed - i_sum) / i_closed).abs(),
    })
}
