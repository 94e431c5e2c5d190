//! Monte Carlo replication of the integrated volatility estimator: tuning
//! rules, deterministic parallel execution, summaries and rate regressions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::estimators::{
    asymptotic_variance, clip_floor, iv_estimate, spot_estimate, spot_estimate_leave_block_out, IVEstimate,
    NoiseCorrection, SpotCurve,
};
use crate::fisher::optimal_single_frequency_h0;
use crate::rng::derive_seed;
use crate::simulate::{simulate_observations, BlockGrid, ObservationSet};
use crate::spectral::compute_yjk0;
use crate::stats::{ks_critical_001, ks_statistic, lag1_autocorrelation, moments, normal_cdf, ols_slope};
use crate::volmodel::VolatilitySpec;

/// Block width relative to the noise level for the integrated estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum H0Rule {
    Fixed { value: f64 },
    /// `h0 = factor * ln n`.
    LogN { factor: f64 },
}

impl Default for H0Rule {
    fn default() -> Self {
        H0Rule::LogN { factor: 4.0 }
    }
}

impl H0Rule {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        let v = match *self {
            H0Rule::Fixed { value } => value,
            H0Rule::LogN { factor } => factor * (n as f64).ln(),
        };
        if !(v.is_finite() && v > 0.0) {
            return config(format!("h0_rule resolves to a non-positive h0 = {v}"));
        }
        Ok(v)
    }
}

/// Number of frequencies per block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum JRule {
    Fixed { value: usize },
    /// `J = ceil(h0 * ln ln n)`, which is `ceil(ln n ln ln n)` for `h0 = ln n`.
    #[default]
    LogLogN,
}

impl JRule {
    pub fn resolve(&self, n: usize, h0: f64) -> Result<usize> {
        let j = match *self {
            JRule::Fixed { value } => value,
            JRule::LogLogN => {
                let ll = (n as f64).ln().ln();
                if ll <= 0.0 {
                    return config(format!("j_rule log_log_n needs n > e, got n = {n}"));
                }
                (h0 * ll).ceil() as usize
            }
        };
        if j == 0 {
            return config("j_rule resolves to J = 0");
        }
        Ok(j)
    }
}

/// Window half-width of the spot estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthRule {
    Fixed { value: f64 },
    /// `b = constant * (eps ln(1/eps))^{1/(2 alpha + 1)}`.
    Rate { constant: f64, alpha: f64 },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Rate {
            constant: 1.0,
            alpha: 1.0,
        }
    }
}

impl BandwidthRule {
    /// Bandwidth clamped to `[h, 1]`.
    pub fn resolve(&self, eps: f64, h: f64) -> Result<f64> {
        let b = match *self {
            BandwidthRule::Fixed { value } => value,
            BandwidthRule::Rate { constant, alpha } => {
                if !(alpha > 0.0 && constant > 0.0) {
                    return config("bandwidth rate needs constant > 0 and alpha > 0");
                }
                constant * (eps * (1.0 / eps).ln()).powf(1.0 / (2.0 * alpha + 1.0))
            }
        };
        if !(b.is_finite() && b > 0.0) {
            return config(format!("bandwidth resolves to a non-positive value {b}"));
        }
        Ok(b.clamp(h, 1.0))
    }
}

/// How the plug-in spot level of each block is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginMode {
    /// Window average leaving out the spot blocks that touch the block itself.
    #[default]
    LeaveBlockOut,
    /// Plain window average over all spot blocks.
    Full,
}

fn default_spot_h0() -> f64 {
    optimal_single_frequency_h0(1.0)
}

fn default_replications() -> usize {
    1
}

/// Tuning of the spot pilot and the integrated estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(default)]
    pub h0_rule: H0Rule,
    #[serde(default)]
    pub j_rule: JRule,
    /// Block width `h / eps` of the spot pilot grid.
    #[serde(default = "default_spot_h0")]
    pub spot_h0: f64,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    /// Known lower bound on the variance, used for the clip floor.
    #[serde(default)]
    pub sigma2_lower_bound: Option<f64>,
    #[serde(default)]
    pub noise_correction: NoiseCorrection,
    #[serde(default)]
    pub plugin: PluginMode,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            h0_rule: H0Rule::default(),
            j_rule: JRule::default(),
            spot_h0: default_spot_h0(),
            bandwidth: BandwidthRule::default(),
            sigma2_lower_bound: None,
            noise_correction: NoiseCorrection::default(),
            plugin: PluginMode::default(),
        }
    }
}

impl EstimatorSettings {
    /// Grids and bandwidth for `n` observations at noise level `delta`.
    pub fn tuning(&self, n: usize, delta: f64) -> Result<Tuning> {
        if !(self.spot_h0.is_finite() && self.spot_h0 > 0.0) {
            return config(format!("spot_h0 must be positive, got {}", self.spot_h0));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return config(format!("delta must be positive, got {delta}"));
        }
        let eps = delta / (n as f64).sqrt();
        let h0 = self.h0_rule.resolve(n)?;
        let iv_grid = BlockGrid::from_h0(h0, 1, eps)?;
        let j = self.j_rule.resolve(n, iv_grid.h0)?;
        let iv_grid = BlockGrid::new(iv_grid.blocks, j, eps)?;
        let spot_grid = BlockGrid::from_h0(self.spot_h0, 1, eps)?;
        for (name, g) in [("h0_rule", &iv_grid), ("spot_h0", &spot_grid)] {
            if g.blocks < 2 {
                return config(format!("{name} gives a single block; 1/h must be at least 2"));
            }
            if (n as f64) * g.h < 2.0 {
                return config(format!(
                    "{name} gives blocks with fewer than two observations (n h = {})",
                    n as f64 * g.h
                ));
            }
        }
        let bandwidth = self.bandwidth.resolve(eps, spot_grid.h)?;
        Ok(Tuning {
            eps,
            iv_grid,
            spot_grid,
            bandwidth,
            clip_floor: clip_floor(self.sigma2_lower_bound),
        })
    }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: VolatilitySpec,
    pub n: usize,
    pub delta: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub parallelism: usize,
}

impl ExperimentConfig {
    pub fn new(spec: VolatilitySpec, n: usize, delta: f64, replications: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            spec,
            n,
            delta,
            replications,
            estimator: EstimatorSettings::default(),
            master_seed,
            parallelism: 0,
        }
    }

    pub fn validate(&self) -> Result<Tuning> {
        self.spec
            .validate()
            .map_err(|e| Error::Config(format!("spec: {e}")))?;
        if self.replications == 0 {
            return config("replications must be at least 1");
        }
        if self.n < 16 {
            return config(format!("n must be at least 16, got {}", self.n));
        }
        self.estimator.tuning(self.n, self.delta)
    }
}

/// Concrete grids and bandwidth implied by a config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub eps: f64,
    pub iv_grid: BlockGrid,
    pub spot_grid: BlockGrid,
    pub bandwidth: f64,
    pub clip_floor: f64,
}

/// Result of running the estimator pipeline on one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRun {
    pub tuning: Tuning,
    /// Plug-in spot levels at the block points of the integrated grid.
    pub plugin: SpotCurve,
    /// Plain window averages at the same points.
    pub spot: SpotCurve,
    pub estimate: IVEstimate,
}

/// Spot pilot, plug-in and weighted integrated estimate for one record.
pub fn estimate_iv(obs: &ObservationSet, settings: &EstimatorSettings) -> Result<IvRun> {
    let tuning = settings.tuning(obs.n, obs.delta)?;
    let (estimate, plugin, spot) = pipeline(obs, settings, &tuning, true)?;
    Ok(IvRun {
        tuning,
        plugin,
        spot: spot.expect("plain curve requested"),
        estimate,
    })
}

fn pipeline(
    obs: &ObservationSet,
    settings: &EstimatorSettings,
    tuning: &Tuning,
    want_plain: bool,
) -> Result<(IVEstimate, SpotCurve, Option<SpotCurve>)> {
    let pilot = compute_yjk0(obs, &tuning.spot_grid)?;
    let points = tuning.iv_grid.block_points();
    let plain = if want_plain || settings.plugin == PluginMode::Full {
        Some(spot_estimate(&pilot, tuning.bandwidth, &points, tuning.clip_floor)?)
    } else {
        None
    };
    let plugin = match settings.plugin {
        PluginMode::LeaveBlockOut => {
            spot_estimate_leave_block_out(&pilot, tuning.bandwidth, &tuning.iv_grid, tuning.clip_floor)?
        }
        PluginMode::Full => plain.clone().expect("plain curve computed above"),
    };
    let coeffs = compute_yjk0(obs, &tuning.iv_grid)?;
    let estimate = iv_estimate(&coeffs, &plugin, obs.delta, obs.n, settings.noise_correction)?;
    if !estimate.value.is_finite() {
        return Err(Error::Numeric("non-finite estimate".into()));
    }
    Ok((estimate, plugin, plain))
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    /// `n^{1/4} (estimate - IV)`.
    pub scaled_error: Option<f64>,
    pub avar_hat: Option<f64>,
    pub clipped: usize,
    /// `sup_t |spot(t) - sigma^2(t)|` over the block points.
    pub spot_sup_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    /// Mean of `estimate - IV`.
    pub bias: f64,
    /// Sample variance of `n^{1/4} (estimate - IV)`.
    pub variance: f64,
    pub target_avar: f64,
    pub variance_ratio: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// KS distance of the errors standardised by the target variance.
    pub ks_statistic: f64,
    pub lag1_autocorrelation: f64,
    pub rmse: f64,
}

impl Summary {
    /// Recomputes the summary from replication records in index order.
    pub fn from_records(records: &[ReplicationRecord], true_iv: f64, target_avar: f64) -> Result<Self> {
        let scaled: Vec<f64> = records.iter().filter_map(|r| r.scaled_error).collect();
        let estimates: Vec<f64> = records.iter().filter_map(|r| r.estimate).collect();
        let failures = records.len() - scaled.len();
        if scaled.is_empty() {
            return Err(Error::Numeric("every replication failed".into()));
        }
        let count = scaled.len();
        let mean = estimates.iter().sum::<f64>() / count as f64;
        let rmse = (estimates.iter().map(|e| (e - true_iv).powi(2)).sum::<f64>() / count as f64).sqrt();
        let sd = target_avar.sqrt();
        let z: Vec<f64> = scaled.iter().map(|s| s / sd).collect();
        let ks = ks_statistic(&z, normal_cdf)?;
        let (variance, skewness, kurtosis, lag1) = if count >= 2 {
            let m = moments(&scaled)?;
            (m.variance, m.skewness, m.kurtosis, lag1_autocorrelation(&scaled))
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        Ok(Summary {
            count,
            failures,
            mean,
            bias: mean - true_iv,
            variance,
            target_avar,
            variance_ratio: variance / target_avar,
            skewness,
            kurtosis,
            ks_statistic: ks,
            lag1_autocorrelation: lag1,
            rmse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub config: ExperimentConfig,
    pub tuning: Tuning,
    pub true_iv: f64,
    pub summary: Summary,
    pub replications: Vec<ReplicationRecord>,
    pub wall_time_secs: f64,
}

impl MCReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-replication CSV spill.
    pub fn write_replications_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.replications {
            out.serialize(ReplicationRow::from(r))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct ReplicationRow<'a> {
    index: usize,
    seed: u64,
    estimate: Option<f64>,
    scaled_error: Option<f64>,
    avar_hat: Option<f64>,
    clipped: usize,
    spot_sup_error: Option<f64>,
    error: Option<&'a str>,
}

impl<'a> From<&'a ReplicationRecord> for ReplicationRow<'a> {
    fn from(r: &'a ReplicationRecord) -> Self {
        ReplicationRow {
            index: r.index,
            seed: r.seed,
            estimate: r.estimate,
            scaled_error: r.scaled_error,
            avar_hat: r.avar_hat,
            clipped: r.clipped,
            spot_sup_error: r.spot_sup_error,
            error: r.error.as_deref(),
        }
    }
}

/// Worker layout for the replication loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Thread pool of the given size, 0 for all cores. Runs sequentially
    /// when the crate is built without the `parallel` feature.
    Parallel(usize),
    Sequential,
}

/// Maps `f` over `0..m` and returns the results in index order.
pub fn map_indexed<T, F>(m: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok((0..m).map(f).collect()),
        Execution::Parallel(threads) => parallel_map(m, threads, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(m: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(|| (0..m).into_par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(m: usize, _threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    Ok((0..m).map(f).collect())
}

struct RepOutput {
    estimate: f64,
    avar_hat: f64,
    clipped: usize,
    spot_sup_error: Option<f64>,
}

fn sup_error(curve: &SpotCurve, spec: &VolatilitySpec) -> f64 {
    curve
        .grid_points
        .iter()
        .zip(&curve.estimates)
        .map(|(&t, &s)| (s - spec.sigma2_unchecked(t)).abs())
        .fold(0.0, f64::max)
}

fn replicate(cfg: &ExperimentConfig, tuning: &Tuning, seed: u64, with_spot_error: bool) -> Result<RepOutput> {
    let obs = simulate_observations(&cfg.spec, cfg.n, cfg.delta, seed)?;
    let (est, plugin, plain) = pipeline(&obs, &cfg.estimator, tuning, with_spot_error)?;
    Ok(RepOutput {
        estimate: est.value,
        avar_hat: est.avar_hat,
        clipped: plugin.clipped,
        spot_sup_error: plain.filter(|_| with_spot_error).map(|c| sup_error(&c, &cfg.spec)),
    })
}

fn execution_for(cfg: &ExperimentConfig) -> Execution {
    Execution::Parallel(cfg.parallelism)
}

/// Runs the replications of `cfg` with the thread layout from its config.
pub fn run_iv_mc(cfg: &ExperimentConfig) -> Result<MCReport> {
    run_iv_mc_with(cfg, execution_for(cfg))
}

pub fn run_iv_mc_with(cfg: &ExperimentConfig, exec: Execution) -> Result<MCReport> {
    run_mc(cfg, exec, false)
}

fn run_mc(cfg: &ExperimentConfig, exec: Execution, with_spot_error: bool) -> Result<MCReport> {
    let tuning = cfg.validate()?;
    let start = Instant::now();
    let n = cfg.n;
    let scale = (n as f64).powf(0.25);
    let true_iv = cfg.spec.integrated_power(2.0, 0.0, 1.0)?;
    let target_avar = asymptotic_variance(&cfg.spec, cfg.delta)?;
    let records = map_indexed(cfg.replications, exec, |i| {
        let seed = derive_seed(cfg.master_seed, i as u64);
        match replicate(cfg, &tuning, seed, with_spot_error) {
            Ok(out) => ReplicationRecord {
                index: i,
                seed,
                estimate: Some(out.estimate),
                scaled_error: Some(scale * (out.estimate - true_iv)),
                avar_hat: Some(out.avar_hat),
                clipped: out.clipped,
                spot_sup_error: out.spot_sup_error,
                error: None,
            },
            Err(e) => ReplicationRecord {
                index: i,
                seed,
                estimate: None,
                scaled_error: None,
                avar_hat: None,
                clipped: 0,
                spot_sup_error: None,
                error: Some(e.to_string()),
            },
        }
    })?;
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures * 100 > cfg.replications {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Numeric(format!(
            "{failures} of {} replications failed (more than 1%); first failure: {first}",
            cfg.replications
        )));
    }
    let summary = Summary::from_records(&records, true_iv, target_avar)?;
    Ok(MCReport {
        config: cfg.clone(),
        tuning,
        true_iv,
        summary,
        replications: records,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub pass: bool,
    pub ks_statistic: f64,
    pub critical_value: f64,
    pub count: usize,
}

/// KS test of `n^{1/4} (IV^ - IV) / sqrt(8 delta int sigma^3)` against the
/// standard normal at level 0.01.
pub fn studentized_normality_check(report: &MCReport) -> Result<NormalityCheck> {
    normality_with_scale(report, report.summary.target_avar)
}

/// As [`studentized_normality_check`] with an arbitrary variance in place of the target.
pub fn normality_with_scale(report: &MCReport, variance: f64) -> Result<NormalityCheck> {
    let z: Vec<f64> = report
        .replications
        .iter()
        .filter_map(|r| r.scaled_error)
        .map(|s| s / variance.sqrt())
        .collect();
    if z.len() < 200 {
        return Err(Error::Precondition(format!(
            "normality check needs at least 200 replications, got {}",
            z.len()
        )));
    }
    let ks = ks_statistic(&z, normal_cdf)?;
    let crit = ks_critical_001(z.len());
    Ok(NormalityCheck {
        pass: ks < crit,
        ks_statistic: ks,
        critical_value: crit,
        count: z.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    /// Root mean squared error of the integrated estimate.
    pub iv_rmse: f64,
    /// Root mean square of the spot sup-errors.
    pub spot_sup_error: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    /// Slope of `ln iv_rmse` on `ln n`.
    pub iv_slope: f64,
    /// Slope of `ln spot_sup_error` on `ln n`.
    pub spot_slope: f64,
}

/// Runs `template` at each sample size in `n_list` and fits log-log error slopes.
pub fn run_rate_regression(template: &ExperimentConfig, n_list: &[usize]) -> Result<RateReport> {
    let mut distinct = n_list.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Precondition(format!(
            "rate regression needs at least 4 distinct n values, got {}",
            distinct.len()
        )));
    }
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut cfg = template.clone();
        cfg.n = n;
        let rep = run_mc(&cfg, execution_for(&cfg), true)?;
        let sups: Vec<f64> = rep.replications.iter().filter_map(|r| r.spot_sup_error).collect();
        let spot = (sups.iter().map(|s| s * s).sum::<f64>() / sups.len() as f64).sqrt();
        points.push(RatePoint {
            n,
            iv_rmse: rep.summary.rmse,
            spot_sup_error: spot,
            replications: rep.summary.count,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let iv: Vec<f64> = points.iter().map(|p| p.iv_rmse.ln()).collect();
    let sp: Vec<f64> = points.iter().map(|p| p.spot_sup_error.ln()).collect();
    Ok(RateReport {
        iv_slope: ols_slope(&xs, &iv)?,
        spot_slope: ols_slope(&xs, &sp)?,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(VolatilitySpec::constant(1.0).unwrap(), 4096, 0.1, m, 7);
        cfg.estimator.h0_rule = H0Rule::LogN { factor: 1.0 };
        cfg
    }

    #[test]
    fn rules_resolve() {
        let n = 1 << 16;
        let h0 = H0Rule::LogN { factor: 4.0 }.resolve(n).unwrap();
        assert!((h0 - 4.0 * (n as f64).ln()).abs() < 1e-12);
        let j = JRule::LogLogN.resolve(n, (n as f64).ln()).unwrap();
        let ln = (n as f64).ln();
        assert_eq!(j, (ln * ln.ln()).ceil() as usize);
        assert_eq!(JRule::Fixed { value: 3 }.resolve(n, 1.0).unwrap(), 3);
        assert!(JRule::Fixed { value: 0 }.resolve(n, 1.0).is_err());
        let b = BandwidthRule::default().resolve(0.01, 0.001).unwrap();
        assert!((b - (0.01 * 100f64.ln()).powf(1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(BandwidthRule::Fixed { value: 5.0 }.resolve(0.01, 0.001).unwrap(), 1.0);
        assert_eq!(BandwidthRule::Fixed { value: 1e-6 }.resolve(0.01, 0.001).unwrap(), 0.001);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(1);
        cfg.replications = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("replications")));
        let mut cfg = small(1);
        cfg.n = 8;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("n must")));
        let mut cfg = small(1);
        cfg.estimator.h0_rule = H0Rule::Fixed { value: 1e6 };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("h0_rule")));
        let t = small(1).validate().unwrap();
        assert_eq!(t.iv_grid.blocks as f64 * t.iv_grid.h, 1.0);
        assert!(t.iv_grid.blocks >= 2);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"spec":{"kind":"constant","level":1.0},"n":1024,"delta":0.1}"#).unwrap();
        assert_eq!(cfg.replications, 1);
        assert_eq!(cfg.estimator.h0_rule, H0Rule::LogN { factor: 4.0 });
        assert_eq!(cfg.estimator.plugin, PluginMode::LeaveBlockOut);
        assert!((cfg.estimator.spot_h0 - 5.441398).abs() < 1e-6);
        let bad = serde_json::from_str::<ExperimentConfig>(r#"{"spec":{"kind":"constant","level":1.0},"n":1024,"delta":0.1,"bogus":1}"#);
        assert!(bad.unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn deterministic_across_execution() {
        let cfg = small(6);
        let a = run_iv_mc_with(&cfg, Execution::Sequential).unwrap();
        let b = run_iv_mc_with(&cfg, Execution::Parallel(3)).unwrap();
        assert_eq!(a.replications, b.replications);
        assert_eq!(a.summary, b.summary);
        let again = Summary::from_records(&a.replications, a.true_iv, a.summary.target_avar).unwrap();
        assert_eq!(again, a.summary);
    }

    #[test]
    fn normality_needs_enough_replications() {
        let rep = run_iv_mc(&small(5)).unwrap();
        assert!(matches!(studentized_normality_check(&rep), Err(Error::Precondition(_))));
    }

    #[test]
    fn rate_needs_four_sizes() {
        let cfg = small(2);
        assert!(matches!(
            run_rate_regression(&cfg, &[1024, 2048, 2048, 4096]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn spill_has_one_row_per_replication() {
        let rep = run_iv_mc(&small(3)).unwrap();
        let mut buf = Vec::new();
        rep.write_replications_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("index,seed,estimate"));
    }
}
