//! Exact simulation of noisy discrete observations `Y_i = X_{i/n} + eps_i`
//! and of the block spectral statistics of the piecewise-constant white
//! noise model, which serve as a distributional oracle.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::rng::rng_from_seed;
use crate::spectral::{CoefficientSource, SpectralCoefficients};
use crate::volmodel::VolatilitySpec;

/// One simulated record of `n` noisy observations on the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub n: usize,
    pub delta: f64,
    pub values: Vec<f64>,
    pub seed: u64,
    pub spec: VolatilitySpec,
}

/// JSON sidecar written next to the observation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationHeader {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub spec: VolatilitySpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    i: usize,
    y: f64,
}

impl ObservationSet {
    /// Noise level of the equivalent white noise model, `delta / sqrt(n)`.
    pub fn eps(&self) -> f64 {
        self.delta / (self.n as f64).sqrt()
    }

    pub fn header(&self) -> ObservationHeader {
        ObservationHeader {
            n: self.n,
            delta: self.delta,
            seed: self.seed,
            spec: self.spec.clone(),
        }
    }

    /// Increments `Y_i - Y_{i-1}` with the convention `Y_0 = 0`.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&y| {
                let d = y - prev;
                prev = y;
                d
            })
            .collect()
    }

    /// Writes `i,y` rows to `csv_path` and the header to `sidecar_path`.
    pub fn write(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
        for (i, &y) in self.values.iter().enumerate() {
            w.serialize(ObservationRow { i: i + 1, y })?;
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path)?), &self.header())?;
        Ok(())
    }

    pub fn read(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let header: ObservationHeader =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path)?))?;
        header.spec.validate()?;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
        let mut values = Vec::with_capacity(header.n);
        for (row_no, row) in r.deserialize::<ObservationRow>().enumerate() {
            let row = row?;
            if row.i != row_no + 1 {
                return config(format!("observation rows out of order at i = {}", row.i));
            }
            values.push(row.y);
        }
        if values.len() != header.n {
            return config(format!(
                "sidecar declares n = {} but CSV holds {} rows",
                header.n,
                values.len()
            ));
        }
        Ok(ObservationSet {
            n: header.n,
            delta: header.delta,
            values,
            seed: header.seed,
            spec: header.spec,
        })
    }
}

/// Equal-width block partition of `[0, 1]` with `max_freq` frequencies per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    /// Block width, always `1 / blocks`.
    pub h: f64,
    #[serde(rename = "J")]
    pub max_freq: usize,
    #[serde(rename = "K")]
    pub blocks: usize,
    /// Block width relative to the noise level, `h / eps`.
    pub h0: f64,
}

impl BlockGrid {
    pub fn new(blocks: usize, max_freq: usize, eps: f64) -> Result<Self> {
        if blocks == 0 || max_freq == 0 {
            return config(format!(
                "block grid needs K >= 1 and J >= 1, got K = {blocks}, J = {max_freq}"
            ));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return domain(format!("noise level eps must be positive, got {eps}"));
        }
        let h = 1.0 / blocks as f64;
        Ok(BlockGrid {
            h,
            max_freq,
            blocks,
            h0: h / eps,
        })
    }

    /// Grid whose block width is as close as possible to `h0 * eps` with `1/h` integral.
    pub fn from_h0(h0: f64, max_freq: usize, eps: f64) -> Result<Self> {
        if !(h0.is_finite() && h0 > 0.0) {
            return domain(format!("h0 must be positive, got {h0}"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return domain(format!("noise level eps must be positive, got {eps}"));
        }
        let blocks = (1.0 / (h0 * eps)).round().max(1.0) as usize;
        BlockGrid::new(blocks, max_freq, eps)
    }

    /// Left endpoints `k h` of the blocks.
    pub fn block_points(&self) -> Vec<f64> {
        (0..self.blocks).map(|k| k as f64 * self.h).collect()
    }

    pub fn same_layout(&self, other: &BlockGrid) -> bool {
        self.blocks == other.blocks && self.max_freq == other.max_freq
    }
}

/// Simulates `Y_i = X_{i/n} + delta * xi_i`, `i = 1..n`, with the exact Gaussian law of
/// `X_t = int_0^t sigma dB`: independent increments of variance `a(i/n) - a((i-1)/n)`.
pub fn simulate_observations(spec: &VolatilitySpec, n: usize, delta: f64, seed: u64) -> Result<ObservationSet> {
    spec.validate()?;
    if n == 0 {
        return domain("sample size n must be at least 1");
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return domain(format!("noise level delta must be non-negative, got {delta}"));
    }
    let mut rng = rng_from_seed(seed);
    let nf = n as f64;
    let mut values = Vec::with_capacity(n);
    let mut x = 0.0;
    let mut a_prev = 0.0;
    for i in 1..=n {
        let a_next = spec.a_unchecked(i as f64 / nf);
        let var = (a_next - a_prev).max(0.0);
        a_prev = a_next;
        let z: f64 = rng.sample(StandardNormal);
        x += var.sqrt() * z;
        values.push(x);
    }
    if delta > 0.0 {
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += delta * z;
        }
    }
    Ok(ObservationSet {
        n,
        delta,
        values,
        seed,
        spec: spec.clone(),
    })
}

/// Draws `y[j][k] ~ N(0, h^2 pi^-2 j^-2 sigma^2(kh) + eps^2)` independently.
///
/// `spec` must be constant on every grid block: a constant, or a piecewise
/// constant whose block count divides `grid.blocks`.
pub fn simulate_spectral_exact(
    spec: &VolatilitySpec,
    grid: &BlockGrid,
    eps: f64,
    seed: u64,
) -> Result<SpectralCoefficients> {
    spec.validate()?;
    if !(eps.is_finite() && eps > 0.0) {
        return domain(format!("noise level eps must be positive, got {eps}"));
    }
    let block_var = aligned_block_levels(spec, grid)?;
    let mut rng = rng_from_seed(seed);
    let h = grid.h;
    let mut y = Vec::with_capacity(grid.max_freq);
    for j in 1..=grid.max_freq {
        let scale = h * h / (PI * PI * (j * j) as f64);
        let row = block_var
            .iter()
            .map(|s2| {
                let z: f64 = rng.sample(StandardNormal);
                (scale * s2 + eps * eps).sqrt() * z
            })
            .collect();
        y.push(row);
    }
    Ok(SpectralCoefficients {
        grid: *grid,
        y,
        source: CoefficientSource::ExactOracle,
        eps,
    })
}

/// Per-block variance levels of a spec that is constant on each grid block.
pub fn aligned_block_levels(spec: &VolatilitySpec, grid: &BlockGrid) -> Result<Vec<f64>> {
    match spec {
        VolatilitySpec::Constant { level } => Ok(vec![*level; grid.blocks]),
        VolatilitySpec::PiecewiseConstant { values } => {
            let l = values.len();
            if !grid.blocks.is_multiple_of(l) {
                return Err(Error::Config(format!(
                    "piecewise constant spec with {l} blocks is not aligned to a grid of {} blocks",
                    grid.blocks
                )));
            }
            let per = grid.blocks / l;
            Ok((0..grid.blocks).map(|k| values[k / per]).collect())
        }
        other => config(format!(
            "exact spectral simulation needs a block-constant spec, got {other:?}"
        )),
    }
}
