//! Spot and integrated volatility estimators built on the block spectral
//! statistics, together with the realized-volatility baseline.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::simulate::{BlockGrid, ObservationSet};
use crate::spectral::SpectralCoefficients;
use crate::volmodel::VolatilitySpec;

/// Lowest clipping floor for spot estimates.
pub const MIN_CLIP_FLOOR: f64 = 1e-4;

/// Clip floor `max(1e-4, lower_bound / 2)` for an optional a-priori variance bound.
pub fn clip_floor(sigma2_lower_bound: Option<f64>) -> f64 {
    match sigma2_lower_bound {
        Some(lb) if lb.is_finite() && lb > 0.0 => MIN_CLIP_FLOOR.max(0.5 * lb),
        _ => MIN_CLIP_FLOOR,
    }
}

/// Spot variance estimates on a set of time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCurve {
    pub grid_points: Vec<f64>,
    pub estimates: Vec<f64>,
    pub bandwidth: f64,
    pub clip_floor: f64,
    /// Number of points where the raw average fell below the floor.
    pub clipped: usize,
}

impl SpotCurve {
    /// The curve read as a piecewise-constant variance over the grid blocks.
    pub fn as_piecewise(&self) -> Result<VolatilitySpec> {
        VolatilitySpec::piecewise_constant(self.estimates.clone())
    }
}

/// Kernel-free local average of the block proxies `h^-2 pi^2 (y_{1k}^2 - eps^2)`.
///
/// Each proxy is exactly unbiased for `sigma^2(kh)` in the piecewise-constant
/// model; with `h = eps` it equals `n delta^-2 pi^2 y^2 - pi^2`. Blocks with
/// `|kh - t| <= b` are averaged, the window is truncated at the interval ends,
/// and the result is clipped below at `floor`.
pub fn spot_estimate(
    coeffs: &SpectralCoefficients,
    bandwidth: f64,
    t_grid: &[f64],
    floor: f64,
) -> Result<SpotCurve> {
    let proxies = spot_proxies(coeffs, bandwidth)?;
    local_averages(&proxies, coeffs.grid.h, bandwidth, t_grid, floor, |_, _| false)
}

/// Spot estimates at the block points of `target`, where the window for block
/// `k` leaves out every spot block that touches `[kh, (k+1)h]`.
///
/// Used as the plug-in for the integrated estimator: the weights of a block
/// are then built from data disjoint from that block's own coefficients.
pub fn spot_estimate_leave_block_out(
    coeffs: &SpectralCoefficients,
    bandwidth: f64,
    target: &BlockGrid,
    floor: f64,
) -> Result<SpotCurve> {
    let proxies = spot_proxies(coeffs, bandwidth)?;
    let hs = coeffs.grid.h;
    let h = target.h;
    let points = target.block_points();
    local_averages(&proxies, hs, bandwidth, &points, floor, |i, ks| {
        let (lo, hi) = (i as f64 * h, (i + 1) as f64 * h);
        ks as f64 * hs <= hi && (ks + 1) as f64 * hs >= lo
    })
}

/// Block proxies `h^-2 pi^2 (y_{1k}^2 - eps^2)`.
fn spot_proxies(coeffs: &SpectralCoefficients, bandwidth: f64) -> Result<Vec<f64>> {
    let eps = coeffs.eps;
    if !(eps.is_finite() && eps > 0.0) {
        return domain(format!("spot estimation needs a positive noise level, got eps = {eps}"));
    }
    let h = coeffs.grid.h;
    if !(bandwidth >= h) {
        return domain(format!("bandwidth {bandwidth} is smaller than the block width {h}"));
    }
    Ok(coeffs
        .row(1)
        .iter()
        .map(|y| PI * PI * (y * y - eps * eps) / (h * h))
        .collect())
}

fn local_averages<F: Fn(usize, usize) -> bool>(
    proxies: &[f64],
    h: f64,
    bandwidth: f64,
    t_grid: &[f64],
    floor: f64,
    skip: F,
) -> Result<SpotCurve> {
    let big_k = proxies.len();
    let mut estimates = Vec::with_capacity(t_grid.len());
    let mut clipped = 0;
    for (i, &t) in t_grid.iter().enumerate() {
        // blocks k with |k h - t| <= b
        let k_lo = ((t - bandwidth) / h).ceil().max(0.0) as usize;
        let k_hi = (((t + bandwidth) / h).floor().min((big_k - 1) as f64)).max(-1.0);
        let mut sum = 0.0;
        let mut count = 0usize;
        if k_hi >= 0.0 {
            for (k, p) in proxies.iter().enumerate().take(k_hi as usize + 1).skip(k_lo) {
                if (k as f64 * h - t).abs() <= bandwidth && !skip(i, k) {
                    sum += p;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Domain(format!("empty spot window at t = {t}")));
        }
        let raw = sum / count as f64;
        if raw < floor {
            clipped += 1;
        }
        estimates.push(raw.max(floor));
    }
    Ok(SpotCurve {
        grid_points: t_grid.to_vec(),
        estimates,
        bandwidth,
        clip_floor: floor,
        clipped,
    })
}

fn check_weight_args(sigma2: f64, h0: f64) -> Result<()> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return domain(format!("weights need a positive variance level, got {sigma2}"));
    }
    if !(h0.is_finite() && h0 > 0.0) {
        return domain(format!("weights need h0 > 0, got {h0}"));
    }
    Ok(())
}

/// Normalised inverse-variance weights `w_j`, `j = 1..=jmax`, for one block.
pub fn weight_vector(sigma2: f64, h0: f64, jmax: usize) -> Result<Vec<f64>> {
    check_weight_args(sigma2, h0)?;
    if jmax == 0 {
        return domain("weights need J >= 1");
    }
    let raw: Vec<f64> = (1..=jmax)
        .map(|j| {
            let x = PI * j as f64 / h0;
            (sigma2 + x * x).powi(-2)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weight of frequency `j` among `1..=jmax` at variance level `sigma2`.
pub fn iv_weights(sigma2: f64, h0: f64, j: usize, jmax: usize) -> Result<f64> {
    if j == 0 || j > jmax {
        return domain(format!("frequency j = {j} outside 1..={jmax}"));
    }
    Ok(weight_vector(sigma2, h0, jmax)?[j - 1])
}

/// Noise term subtracted from each squared coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCorrection {
    /// `eps^2 = delta^2 / n`, the variance of the noise part of each coefficient.
    #[default]
    Squared,
    /// `delta / n`, as printed in the efficiency theorem; agrees with `Squared` only for `delta = 1`.
    Literal,
}

impl NoiseCorrection {
    pub fn value(self, delta: f64, n: usize) -> f64 {
        match self {
            NoiseCorrection::Squared => delta * delta / n as f64,
            NoiseCorrection::Literal => delta / n as f64,
        }
    }
}

/// Integrated volatility estimate with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVEstimate {
    pub value: f64,
    /// True integrated variance when known.
    pub target: Option<f64>,
    /// Plug-in asymptotic variance `8 delta int sigma~^3`.
    pub avar_hat: f64,
    pub grid: BlockGrid,
    pub j_used: usize,
}

/// Weighted spectral estimator
/// `sum_k h sum_j w_jk(sigma~^2) h^-2 j^2 pi^2 (y_jk^2 - c)` of `int sigma^2`.
///
/// `spot` holds one plug-in level per block of `coeffs.grid`, evaluated at the
/// block points `kh`.
pub fn iv_estimate(
    coeffs: &SpectralCoefficients,
    spot: &SpotCurve,
    delta: f64,
    n: usize,
    correction: NoiseCorrection,
) -> Result<IVEstimate> {
    let grid = coeffs.grid;
    if spot.estimates.len() != grid.blocks {
        return config(format!(
            "spot curve has {} points but the grid has {} blocks",
            spot.estimates.len(),
            grid.blocks
        ));
    }
    if spot
        .grid_points
        .iter()
        .zip(grid.block_points())
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return config("spot curve points do not coincide with the block points k h");
    }
    if coeffs.y.len() != grid.max_freq || coeffs.y.iter().any(|r| r.len() != grid.blocks) {
        return config("coefficient array does not match its grid");
    }
    if !(delta.is_finite() && delta > 0.0) || n == 0 {
        return domain(format!("need delta > 0 and n >= 1, got delta = {delta}, n = {n}"));
    }
    let eps = delta / (n as f64).sqrt();
    if (coeffs.eps - eps).abs() > 1e-12 * eps.max(1.0) {
        return config(format!(
            "coefficients were computed at eps = {} but delta / sqrt(n) = {eps}",
            coeffs.eps
        ));
    }
    let sub = correction.value(delta, n);
    let h = grid.h;
    let h0 = grid.h0;
    let mut value = 0.0;
    for (k, &s2) in spot.estimates.iter().enumerate() {
        let w = weight_vector(s2, h0, grid.max_freq)?;
        let mut block = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let jf = (j + 1) as f64;
            let y = coeffs.y[j][k];
            block += wj * jf * jf * PI * PI / (h * h) * (y * y - sub);
        }
        value += h * block;
    }
    let avar_hat = asymptotic_variance(&spot.as_piecewise()?, delta)?;
    Ok(IVEstimate {
        value,
        target: None,
        avar_hat,
        grid,
        j_used: grid.max_freq,
    })
}

/// `sum_{i=1}^n (Y_i - Y_{i-1})^2` with `Y_0 = 0`.
pub fn realized_volatility(obs: &ObservationSet) -> Result<f64> {
    if obs.n < 2 {
        return domain("realized volatility needs n >= 2");
    }
    Ok(obs.increments().iter().map(|d| d * d).sum())
}

/// Efficient asymptotic variance `8 delta int_0^1 sigma^3`.
pub fn asymptotic_variance(spec: &VolatilitySpec, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return domain(format!("delta must be positive, got {delta}"));
    }
    Ok(8.0 * delta * spec.integrated_power(3.0, 0.0, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_observations, simulate_spectral_exact};
    use crate::spectral::CoefficientSource;

    #[test]
    fn single_frequency_weight_is_one() {
        assert_eq!(iv_weights(1.3, 2.0, 1, 1).unwrap(), 1.0);
    }

    #[test]
    fn two_frequency_weights_by_direct_transcription() {
        let p2 = PI * PI;
        let w1 = (1.0 + p2).powi(-2) / ((1.0 + p2).powi(-2) + (1.0 + 4.0 * p2).powi(-2));
        assert!((iv_weights(1.0, 1.0, 1, 2).unwrap() - w1).abs() < 1e-15);
        assert!((iv_weights(1.0, 1.0, 2, 2).unwrap() - (1.0 - w1)).abs() < 1e-15);
    }

    #[test]
    fn weights_decrease_and_sum_to_one() {
        for s2 in [0.1, 1.0, 4.0] {
            for h0 in [1.0, 10.0, 50.0] {
                let w = weight_vector(s2, h0, 40).unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(w.windows(2).all(|p| p[0] > p[1]));
            }
        }
        assert!(iv_weights(0.0, 1.0, 1, 2).is_err());
        assert!(iv_weights(1.0, 1.0, 3, 2).is_err());
    }

    #[test]
    fn asymptotic_variance_values() {
        let c = VolatilitySpec::constant(1.0).unwrap();
        assert!((asymptotic_variance(&c, 0.1).unwrap() - 0.8).abs() < 1e-15);
        let pc = VolatilitySpec::piecewise_constant(vec![1.0, 4.0]).unwrap();
        assert!((asymptotic_variance(&pc, 1.0).unwrap() - 36.0).abs() < 1e-12);
    }

    #[test]
    fn realized_volatility_is_sum_of_squares() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let mut obs = simulate_observations(&spec, 3, 0.0, 1).unwrap();
        obs.values = vec![1.0, 3.0, 2.0];
        assert_eq!(realized_volatility(&obs).unwrap(), 1.0 + 4.0 + 1.0);
        obs.n = 1;
        obs.values = vec![1.0];
        assert!(realized_volatility(&obs).is_err());
    }

    #[test]
    fn spot_errors() {
        let grid = BlockGrid::new(16, 1, 1.0 / 16.0).unwrap();
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let c = simulate_spectral_exact(&spec, &grid, 1.0 / 16.0, 1).unwrap();
        assert!(spot_estimate(&c, 0.01, &[0.5], MIN_CLIP_FLOOR).is_err());
        // a window left of the interval contains no block
        let e = spot_estimate(&c, 0.1, &[-0.5], MIN_CLIP_FLOOR).unwrap_err();
        assert!(e.to_string().contains("t = -0.5"));
        let mut zero = c.clone();
        zero.eps = 0.0;
        assert!(spot_estimate(&zero, 0.1, &[0.5], MIN_CLIP_FLOOR).is_err());
    }

    #[test]
    fn spot_clips_and_counts() {
        let grid = BlockGrid::new(8, 1, 0.125).unwrap();
        let c = SpectralCoefficients {
            grid,
            y: vec![vec![0.0; 8]],
            source: CoefficientSource::ExactOracle,
            eps: 0.125,
        };
        let s = spot_estimate(&c, 0.2, &[0.0, 0.5, 1.0], 0.25).unwrap();
        assert_eq!(s.estimates, vec![0.25; 3]);
        assert_eq!(s.clipped, 3);
    }

    #[test]
    fn leave_block_out_skips_overlapping_spot_blocks() {
        // 8 spot blocks of width 1/8, proxies equal to k + 1 after noise removal
        let eps = 0.125;
        let grid = BlockGrid::new(8, 1, eps).unwrap();
        let h = grid.h;
        let y = (0..8)
            .map(|k| ((k as f64 + 1.0) * h * h / (PI * PI) + eps * eps).sqrt())
            .collect();
        let c = SpectralCoefficients {
            grid,
            y: vec![y],
            source: CoefficientSource::ExactOracle,
            eps,
        };
        let target = BlockGrid::new(4, 1, eps).unwrap();
        let full = spot_estimate(&c, 1.0, &target.block_points(), MIN_CLIP_FLOOR).unwrap();
        assert!(full.estimates.iter().all(|v| (v - 4.5).abs() < 1e-12));
        let lo = spot_estimate_leave_block_out(&c, 1.0, &target, MIN_CLIP_FLOOR).unwrap();
        // target block [0, 1/4] touches spot blocks 0, 1, 2
        assert!((lo.estimates[0] - (4.0 + 5.0 + 6.0 + 7.0 + 8.0) / 5.0).abs() < 1e-12);
        // target block [1/4, 1/2] touches spot blocks 1..=4
        assert!((lo.estimates[1] - (1.0 + 6.0 + 7.0 + 8.0) / 4.0).abs() < 1e-12);
        assert_eq!(lo.grid_points, target.block_points());
        // a window holding only touching blocks is empty
        assert!(spot_estimate_leave_block_out(&c, 0.125, &target, MIN_CLIP_FLOOR).is_err());
    }

    #[test]
    fn iv_checks_grid_agreement() {
        let eps = 0.01;
        let grid = BlockGrid::new(10, 4, eps).unwrap();
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let c = simulate_spectral_exact(&spec, &grid, eps, 2).unwrap();
        let bad = SpotCurve {
            grid_points: vec![0.0; 9],
            estimates: vec![1.0; 9],
            bandwidth: 0.1,
            clip_floor: MIN_CLIP_FLOOR,
            clipped: 0,
        };
        assert!(matches!(iv_estimate(&c, &bad, 1.0, 10_000, NoiseCorrection::Squared), Err(Error::Config(_))));
        let good = SpotCurve {
            grid_points: grid.block_points(),
            estimates: vec![1.0; 10],
            ..bad
        };
        assert!(iv_estimate(&c, &good, 1.0, 10_000, NoiseCorrection::Squared).is_ok());
        // eps disagreement
        assert!(iv_estimate(&c, &good, 2.0, 10_000, NoiseCorrection::Squared).is_err());
    }

    #[test]
    fn literal_correction_differs_unless_delta_is_one() {
        assert_eq!(NoiseCorrection::Squared.value(1.0, 100), NoiseCorrection::Literal.value(1.0, 100));
        assert!(NoiseCorrection::Squared.value(0.1, 100) < NoiseCorrection::Literal.value(0.1, 100));
    }
}
