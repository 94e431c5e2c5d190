//! Block trigonometric system and the discrete spectral statistics.
//!
//! On block `[kh, (k+1)h]` the functions
//! `phi_jk(t) = sqrt(2/h) cos(j pi (t - kh) / h)` are orthonormal, have zero
//! mean, and their antiderivatives
//! `Phi_jk(t) = sqrt(2h) / (pi j) sin(j pi (t - kh) / h)` vanish at both block
//! ends. The statistics `y_jk` are the coefficients `int phi_jk dY` of the
//! observation process; from discrete data they are obtained by partial
//! integration against the linear interpolation of `Y_1..Y_n` (with `Y_0 = 0`).

use std::f64::consts::{PI, SQRT_2};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::simulate::{BlockGrid, ObservationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    /// Drawn directly from the Gaussian law of the piecewise-constant white noise model.
    ExactOracle,
    /// Computed from discrete observations.
    FromObservations,
}

/// Array `y[j-1][k]` of spectral statistics for `j = 1..=J`, `k = 0..K-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCoefficients {
    pub grid: BlockGrid,
    pub y: Vec<Vec<f64>>,
    pub source: CoefficientSource,
    pub eps: f64,
}

impl SpectralCoefficients {
    /// Coefficient at frequency `j >= 1` and block `k`.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.y[j - 1][k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.y[j - 1]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// CSV text with columns `j,k,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,k,y\n");
        for (j, row) in self.y.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{:e}\n", j + 1, k, v));
            }
        }
        out
    }
}

fn in_block(k: usize, h: f64, t: f64) -> bool {
    let lo = k as f64 * h;
    t >= lo && t <= lo + h
}

/// `phi_jk(t)`, zero outside `[kh, (k+1)h]`.
pub fn phi(j: usize, k: usize, h: f64, t: f64) -> f64 {
    if !in_block(k, h, t) {
        return 0.0;
    }
    SQRT_2 / h.sqrt() * (j as f64 * PI * (t - k as f64 * h) / h).cos()
}

/// Antiderivative `Phi_jk(t)` of `phi_jk`, zero outside the block and at its ends.
pub fn phi_antiderivative(j: usize, k: usize, h: f64, t: f64) -> f64 {
    if !in_block(k, h, t) {
        return 0.0;
    }
    let jf = j as f64;
    (2.0 * h).sqrt() / (PI * jf) * (jf * PI * (t - k as f64 * h) / h).sin()
}

/// Exact `int_a^b Phi_jk(t) dt` over `[a, b]` intersected with the block.
pub fn antiderivative_cell_integral(j: usize, k: usize, h: f64, a: f64, b: f64) -> Result<f64> {
    if a > b {
        return domain(format!("cell bounds reversed: a = {a} > b = {b}"));
    }
    let lo_blk = k as f64 * h;
    let lo = a.max(lo_blk);
    let hi = b.min(lo_blk + h);
    if hi <= lo {
        return Ok(0.0);
    }
    let jf = j as f64;
    let scale = (2.0 * h).sqrt() * h / (PI * PI * jf * jf);
    let c = |t: f64| (jf * PI * (t - lo_blk) / h).cos();
    Ok(scale * (c(lo) - c(hi)))
}

/// Discrete statistics `y0_jk = sum_i (-n int_{cell i} Phi_jk) (Y_i - Y_{i-1})`.
///
/// The factor `n` makes `y0_jk` the coefficient `int phi_jk dY` of the linearly
/// interpolated record, so its noise variance is `eps^2 = delta^2 / n`.
/// Blocks need not contain whole cells; cut cells are integrated exactly.
pub fn compute_yjk0(obs: &ObservationSet, grid: &BlockGrid) -> Result<SpectralCoefficients> {
    let n = obs.n;
    if obs.values.len() != n {
        return config(format!("observation set declares n = {n} but holds {}", obs.values.len()));
    }
    if (n as f64) * grid.h < 2.0 {
        return config(format!(
            "block width h = {} leaves fewer than two observations per block (n = {n})",
            grid.h
        ));
    }
    let incr = obs.increments();
    let big_k = grid.blocks;
    let jmax = grid.max_freq;
    let h = grid.h;
    let nf = n as f64;
    let mut y = vec![vec![0.0; big_k]; jmax];

    let mut e = Vec::new();
    let mut base = Vec::new();
    let mut cur = Vec::new();
    for k in 0..big_k {
        // interior grid points m/n strictly inside (kh, (k+1)h), in integer arithmetic
        let lo_num = (k * n) as u128;
        let hi_num = ((k + 1) * n) as u128;
        let kk = big_k as u128;
        let first_cell = (lo_num / kk) as usize + 1;
        let m_lo = (lo_num / kk) as usize + 1;
        let m_hi = hi_num.div_ceil(kk) as usize - 1;
        let interior = (m_hi + 1).saturating_sub(m_lo);
        let pieces = interior + 1;

        // e_r = d_r - d_{r-1}, d_{-1} = d_pieces = 0
        e.clear();
        let mut prev = 0.0;
        for r in 0..pieces {
            let d = incr[first_cell + r - 1];
            e.push(d - prev);
            prev = d;
        }
        e.push(-prev);

        // angles theta_r = pi (p_r - kh) / h at the piece boundaries
        base.clear();
        base.push((1.0, 0.0));
        for m in m_lo..=m_hi {
            let num = (m * big_k) as f64 - (k * n) as f64;
            let theta = PI * num / nf;
            base.push((theta.cos(), theta.sin()));
        }
        base.push((-1.0, 0.0));
        cur.clear();
        cur.extend_from_slice(&base);

        for j in 1..=jmax {
            let jf = j as f64;
            let scale = (2.0 * h).sqrt() * h / (PI * PI * jf * jf);
            let dot: f64 = cur.iter().zip(&e).map(|(c, ev)| c.0 * ev).sum();
            y[j - 1][k] = -nf * scale * dot;
            if j < jmax {
                for (c, b) in cur.iter_mut().zip(&base) {
                    *c = (c.0 * b.0 - c.1 * b.1, c.1 * b.0 + c.0 * b.1);
                }
            }
        }
    }
    Ok(SpectralCoefficients {
        grid: *grid,
        y,
        source: CoefficientSource::FromObservations,
        eps: obs.eps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{adaptive_simpson, midpoint_sum};
    use crate::simulate::simulate_observations;
    use crate::volmodel::VolatilitySpec;

    #[test]
    fn phi_values() {
        assert!((phi(1, 0, 0.5, 0.0) - 2.0).abs() < 1e-15);
        assert!(phi(1, 0, 0.5, 0.25).abs() < 1e-15);
        assert_eq!(phi(1, 0, 0.5, 0.75), 0.0);
        assert_eq!(phi(3, 2, 0.25, 0.1), 0.0);
    }

    #[test]
    fn antiderivative_values() {
        assert!((phi_antiderivative(1, 0, 0.5, 0.25) - 1.0 / PI).abs() < 1e-15);
        for (j, k, h) in [(1, 0, 0.5), (3, 2, 0.25), (7, 5, 0.1)] {
            let lo = k as f64 * h;
            assert!(phi_antiderivative(j, k, h, lo).abs() < 1e-15);
            assert!(phi_antiderivative(j, k, h, lo + h).abs() < 1e-14);
        }
    }

    #[test]
    fn antiderivative_derivative_is_phi() {
        let dt = 1e-6;
        for (j, k, h) in [(1usize, 0usize, 0.5), (2, 1, 0.25), (5, 3, 0.125)] {
            for s in [0.1, 0.37, 0.8] {
                let t = (k as f64 + s) * h;
                let fd = (phi_antiderivative(j, k, h, t + dt) - phi_antiderivative(j, k, h, t - dt)) / (2.0 * dt);
                assert!((fd - phi(j, k, h, t)).abs() < 1e-6, "j={j} k={k} s={s}");
            }
        }
    }

    #[test]
    fn cell_integral_matches_riemann_oracle() {
        let h = 0.25;
        let k = 1;
        let full = antiderivative_cell_integral(1, k, h, 0.0, 1.0).unwrap();
        let oracle = midpoint_sum(|t| phi_antiderivative(1, k, h, t), 0.25, 0.5, 1_000_000);
        assert!((full - 2.0 * (2.0 * h).sqrt() * h / (PI * PI)).abs() < 1e-15);
        assert!((full - oracle).abs() < 1e-10);
        assert!(antiderivative_cell_integral(2, k, h, 0.25, 0.5).unwrap().abs() < 1e-15);
        assert_eq!(antiderivative_cell_integral(1, k, h, 0.6, 0.9).unwrap(), 0.0);
        let part = antiderivative_cell_integral(3, k, h, 0.3, 0.41).unwrap();
        let oracle = midpoint_sum(|t| phi_antiderivative(3, k, h, t), 0.3, 0.41, 1_000_000);
        assert!((part - oracle).abs() < 1e-10);
        assert!(antiderivative_cell_integral(1, k, h, 0.5, 0.4).is_err());
    }

    #[test]
    fn family_is_orthonormal_with_zero_mean() {
        let big_k = 4;
        let h = 1.0 / big_k as f64;
        let jmax = 6;
        for k in 0..big_k {
            let lo = k as f64 * h;
            for j in 1..=jmax {
                let mean = adaptive_simpson(&|t| phi(j, k, h, t), lo, lo + h, 1e-14, 16);
                assert!(mean.abs() < 1e-12);
                for l in 1..=jmax {
                    let g = adaptive_simpson(&|t| phi(j, k, h, t) * phi(l, k, h, t), lo, lo + h, 1e-13, 32);
                    let want = if j == l { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-10, "j={j} l={l} k={k}: {g}");
                }
            }
        }
        // disjoint supports for different blocks
        assert_eq!(phi(1, 0, h, 0.3) * phi(1, 1, h, 0.3), 0.0);
    }

    fn direct_yjk0(obs: &ObservationSet, grid: &BlockGrid, j: usize, k: usize) -> f64 {
        let n = obs.n as f64;
        let incr = obs.increments();
        incr.iter()
            .enumerate()
            .map(|(i, d)| {
                let a = i as f64 / n;
                let b = (i + 1) as f64 / n;
                -n * antiderivative_cell_integral(j, k, grid.h, a, b).unwrap() * d
            })
            .sum()
    }

    #[test]
    fn recurrence_matches_direct_cell_sums() {
        let spec = VolatilitySpec::sinusoid(1.0, 0.5, 1, 0.0).unwrap();
        // 1000 / 7 is not integral, so blocks cut observation cells
        let obs = simulate_observations(&spec, 1000, 0.3, 11).unwrap();
        let grid = BlockGrid::new(7, 12, obs.eps()).unwrap();
        let c = compute_yjk0(&obs, &grid).unwrap();
        for k in 0..7 {
            for j in 1..=12 {
                let d = direct_yjk0(&obs, &grid, j, k);
                assert!((c.get(j, k) - d).abs() < 1e-12 * (1.0 + d.abs()), "j={j} k={k}");
            }
        }
    }

    #[test]
    fn constant_record_vanishes_off_first_block() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let mut obs = simulate_observations(&spec, 64, 0.1, 1).unwrap();
        obs.values.iter_mut().for_each(|v| *v = 3.5);
        let grid = BlockGrid::new(4, 3, obs.eps()).unwrap();
        let c = compute_yjk0(&obs, &grid).unwrap();
        for k in 1..4 {
            for j in 1..=3 {
                assert_eq!(c.get(j, k), 0.0);
            }
        }
    }

    #[test]
    fn too_few_observations_per_block() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let obs = simulate_observations(&spec, 10, 0.1, 1).unwrap();
        let grid = BlockGrid::new(8, 1, obs.eps()).unwrap();
        assert!(compute_yjk0(&obs, &grid).is_err());
    }
}
