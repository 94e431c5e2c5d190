use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use specvol::equivalence::{
    counterexample_signal_gap, equivalence_decay_experiment, hellinger_bound, hellinger_squared, GaussianLaw,
};
use specvol::estimators::spot_estimate;
use specvol::fisher::fisher_row;
use specvol::harness::{
    estimate_iv, run_iv_mc, run_rate_regression, studentized_normality_check, EstimatorSettings,
    ExperimentConfig,
};
use specvol::simulate::{simulate_observations, BlockGrid, ObservationSet};
use specvol::spectral::compute_yjk0;
use specvol::stats::{ks_two_sample, ks_two_sample_pvalue};
use specvol::{Error, VolatilitySpec};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "specvol", version, about = "Spectral volatility estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo runs (0 = all cores).
    #[arg(long, global = true, env = "SPECVOL_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct Io {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy observations to CSV plus a JSON sidecar.
    Simulate(Io),
    /// Block spectral statistics of an observation file.
    Spectral(Io),
    /// Spot volatility curve of an observation file.
    Spot(Io),
    /// Integrated volatility estimate of an observation file.
    Iv(Io),
    /// Monte Carlo replication of the integrated estimator.
    McIv(Io),
    /// Log-log error slopes over a list of sample sizes.
    Rate(Io),
    /// Fisher information table.
    Fisher(Io),
    /// Hellinger distance and bound between two Gaussian laws.
    Hellinger(Io),
    /// Hellinger decay between the regression and symmetrised models.
    Decay(Io),
    /// Signal gap and increment test for the oscillating volatility.
    Counterexample(Io),
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Acceptance(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

type Outcome = Result<String, Failure>;

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| anyhow!("{}: malformed JSON: {e}", path.display()))?;
    match value.get("schema_version") {
        None => return Err(anyhow!("{}: missing field `schema_version`", path.display())),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(anyhow!(
                "{}: field `schema_version` is {v}, expected {SCHEMA_VERSION}",
                path.display()
            ))
        }
        Some(_) => {}
    }
    let mut de = serde_json::Deserializer::from_str(&text);
    T::deserialize(&mut de).map_err(|e| anyhow!("{}: invalid config: {e}", path.display()))
}

fn open_out(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> anyhow::Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(out: &Option<PathBuf>, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(open_out(out)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn sidecar_for(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load_observations(path: &Path) -> anyhow::Result<ObservationSet> {
    ObservationSet::read(path, &sidecar_for(path))
        .with_context(|| format!("cannot load observations from {}", path.display()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[allow(dead_code)]
    schema_version: u32,
    spec: VolatilitySpec,
    n: usize,
    delta: f64,
    #[serde(default)]
    seed: u64,
}

fn cmd_simulate(io: &Io, seed: Option<u64>) -> Outcome {
    let cfg: SimulateConfig = read_config(&io.config)?;
    let out = io
        .out
        .clone()
        .ok_or_else(|| anyhow!("simulate needs --out <file.csv>; the sidecar goes next to it"))?;
    let seed = seed.unwrap_or(cfg.seed);
    let obs = simulate_observations(&cfg.spec, cfg.n, cfg.delta, seed)?;
    let side = sidecar_for(&out);
    obs.write(&out, &side)?;
    Ok(format!(
        "simulated n = {} (delta = {}, seed = {seed}) to {} and {}",
        cfg.n,
        cfg.delta,
        out.display(),
        side.display()
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectralConfig {
    #[allow(dead_code)]
    schema_version: u32,
    observations: PathBuf,
    #[serde(default)]
    blocks: Option<usize>,
    #[serde(default)]
    h0: Option<f64>,
    max_freq: usize,
}

fn cmd_spectral(io: &Io) -> Outcome {
    let cfg: SpectralConfig = read_config(&io.config)?;
    let obs = load_observations(&cfg.observations)?;
    let grid = match (cfg.blocks, cfg.h0) {
        (Some(k), None) => BlockGrid::new(k, cfg.max_freq, obs.eps())?,
        (None, Some(h0)) => BlockGrid::from_h0(h0, cfg.max_freq, obs.eps())?,
        _ => return Err(anyhow!("config needs exactly one of `blocks` and `h0`").into()),
    };
    let coeffs = compute_yjk0(&obs, &grid)?;
    let mut w = open_out(&io.out)?;
    w.write_all(coeffs.to_csv().as_bytes())?;
    w.flush()?;
    Ok(format!("computed {} x {} coefficients (h0 = {:.3})", grid.max_freq, grid.blocks, grid.h0))
}

fn default_points() -> usize {
    101
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpotConfig {
    #[allow(dead_code)]
    schema_version: u32,
    observations: PathBuf,
    #[serde(default)]
    estimator: EstimatorSettings,
    /// Evaluation points, equally spaced on [0, 1].
    #[serde(default = "default_points")]
    points: usize,
}

#[derive(Serialize)]
struct SpotRow {
    t: f64,
    sigma2_hat: f64,
    sigma2: f64,
}

fn cmd_spot(io: &Io) -> Outcome {
    let cfg: SpotConfig = read_config(&io.config)?;
    if cfg.points < 2 {
        return Err(anyhow!("field `points` must be at least 2").into());
    }
    let obs = load_observations(&cfg.observations)?;
    let tuning = cfg.estimator.tuning(obs.n, obs.delta)?;
    let b = tuning.bandwidth;
    let pilot = compute_yjk0(&obs, &tuning.spot_grid)?;
    let ts: Vec<f64> = (0..cfg.points).map(|i| i as f64 / (cfg.points - 1) as f64).collect();
    let curve = spot_estimate(&pilot, b, &ts, tuning.clip_floor)?;
    let rows: Vec<SpotRow> = ts
        .iter()
        .zip(&curve.estimates)
        .map(|(&t, &s)| SpotRow {
            t,
            sigma2_hat: s,
            sigma2: obs.spec.eval_sigma2(t).unwrap_or(f64::NAN),
        })
        .collect();
    write_csv(&io.out, &rows)?;
    Ok(format!(
        "spot curve at {} points, bandwidth {b:.4}, {} clipped",
        cfg.points, curve.clipped
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IvConfig {
    #[allow(dead_code)]
    schema_version: u32,
    observations: PathBuf,
    #[serde(default)]
    estimator: EstimatorSettings,
}

fn cmd_iv(io: &Io) -> Outcome {
    let cfg: IvConfig = read_config(&io.config)?;
    let obs = load_observations(&cfg.observations)?;
    let mut run = estimate_iv(&obs, &cfg.estimator)?;
    let truth = obs.spec.integrated_power(2.0, 0.0, 1.0)?;
    run.estimate.target = Some(truth);
    write_json(&io.out, &run)?;
    Ok(format!(
        "IV estimate {:.6} (simulation truth {truth:.6}), K = {}, J = {}",
        run.estimate.value, run.tuning.iv_grid.blocks, run.tuning.iv_grid.max_freq
    ))
}

fn default_band() -> f64 {
    0.15
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct McAcceptance {
    /// Allowed relative deviation of the variance from its target.
    #[serde(default = "default_band")]
    variance_band: f64,
    /// Also require the studentized KS test to pass.
    #[serde(default)]
    normality: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct McIvConfig {
    #[allow(dead_code)]
    schema_version: u32,
    experiment: ExperimentConfig,
    #[serde(default)]
    acceptance: Option<McAcceptance>,
    /// Per-replication CSV spill.
    #[serde(default)]
    spill: Option<PathBuf>,
}

fn apply_overrides(exp: &mut ExperimentConfig, seed: Option<u64>, threads: Option<usize>) {
    if let Some(s) = seed {
        exp.master_seed = s;
    }
    if let Some(t) = threads {
        exp.parallelism = t;
    }
}

fn cmd_mc_iv(io: &Io, seed: Option<u64>, threads: Option<usize>) -> Outcome {
    let mut cfg: McIvConfig = read_config(&io.config)?;
    apply_overrides(&mut cfg.experiment, seed, threads);
    let rep = run_iv_mc(&cfg.experiment)?;
    write_json(&io.out, &rep)?;
    if let Some(p) = &cfg.spill {
        rep.write_replications_csv(BufWriter::new(File::create(p)?))?;
    }
    let s = rep.summary;
    let mut line = format!(
        "M = {}, variance {:.4} vs target {:.4} (ratio {:.3}), KS {:.4}, {:.1}s",
        s.count, s.variance, s.target_avar, s.variance_ratio, s.ks_statistic, rep.wall_time_secs
    );
    if let Some(acc) = cfg.acceptance {
        let mut failed = Vec::new();
        if (s.variance_ratio - 1.0).abs() > acc.variance_band {
            failed.push(format!("variance ratio outside 1 +- {}", acc.variance_band));
        }
        if acc.normality {
            let ks = studentized_normality_check(&rep)?;
            if !ks.pass {
                failed.push(format!("KS {:.4} >= {:.4}", ks.ks_statistic, ks.critical_value));
            }
        }
        if !failed.is_empty() {
            return Err(Failure::Acceptance(format!("{line}; acceptance failed: {}", failed.join(", "))));
        }
        line.push_str("; acceptance passed");
    }
    Ok(line)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RateAcceptance {
    #[serde(default)]
    iv_slope: Option<[f64; 2]>,
    #[serde(default)]
    spot_slope: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RateConfig {
    #[allow(dead_code)]
    schema_version: u32,
    experiment: ExperimentConfig,
    n_list: Vec<usize>,
    #[serde(default)]
    acceptance: Option<RateAcceptance>,
}

fn cmd_rate(io: &Io, seed: Option<u64>, threads: Option<usize>) -> Outcome {
    let mut cfg: RateConfig = read_config(&io.config)?;
    apply_overrides(&mut cfg.experiment, seed, threads);
    let rep = run_rate_regression(&cfg.experiment, &cfg.n_list)?;
    write_json(&io.out, &rep)?;
    let line = format!("IV slope {:.4}, spot slope {:.4}", rep.iv_slope, rep.spot_slope);
    if let Some(acc) = cfg.acceptance {
        let mut failed = Vec::new();
        for (name, window, v) in [("iv_slope", acc.iv_slope, rep.iv_slope), ("spot_slope", acc.spot_slope, rep.spot_slope)] {
            if let Some([lo, hi]) = window {
                if !(lo..=hi).contains(&v) {
                    failed.push(format!("{name} {v:.4} outside [{lo}, {hi}]"));
                }
            }
        }
        if !failed.is_empty() {
            return Err(Failure::Acceptance(format!("{line}; acceptance failed: {}", failed.join(", "))));
        }
    }
    Ok(line)
}

fn default_jmax() -> usize {
    1_000_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FisherConfig {
    #[allow(dead_code)]
    schema_version: u32,
    theta: Vec<f64>,
    h0: Vec<f64>,
    #[serde(default = "default_jmax")]
    jmax: usize,
}

fn cmd_fisher(io: &Io) -> Outcome {
    let cfg: FisherConfig = read_config(&io.config)?;
    if cfg.theta.is_empty() || cfg.h0.is_empty() {
        return Err(anyhow!("fields `theta` and `h0` must be non-empty").into());
    }
    let mut rows = Vec::new();
    for &theta in &cfg.theta {
        for &h0 in &cfg.h0 {
            rows.push(fisher_row(theta, h0, cfg.jmax)?);
        }
    }
    write_csv(&io.out, &rows)?;
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    Ok(format!("{} rows, max rel_err {worst:.2e}", rows.len()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LawConfig {
    #[serde(default)]
    mean: Option<Vec<f64>>,
    cov: Vec<Vec<f64>>,
}

impl LawConfig {
    fn build(&self, name: &str) -> anyhow::Result<GaussianLaw> {
        let d = self.cov.len();
        if self.cov.iter().any(|r| r.len() != d) {
            return Err(anyhow!("field `{name}.cov` must be a square matrix"));
        }
        let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; d]);
        if mean.len() != d {
            return Err(anyhow!("field `{name}.mean` has length {} but `cov` is {d}x{d}", mean.len()));
        }
        let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| self.cov[i][j]);
        GaussianLaw::new(nalgebra::DVector::from_vec(mean), cov).map_err(|e| anyhow!("field `{name}`: {e}"))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HellingerConfig {
    #[allow(dead_code)]
    schema_version: u32,
    p: LawConfig,
    q: LawConfig,
}

#[derive(Serialize)]
struct HellingerOut {
    hellinger: f64,
    hellinger_squared: f64,
    bound: f64,
}

fn cmd_hellinger(io: &Io) -> Outcome {
    let cfg: HellingerConfig = read_config(&io.config)?;
    let p = cfg.p.build("p")?;
    let q = cfg.q.build("q")?;
    let h2 = hellinger_squared(&p, &q)?;
    let out = HellingerOut {
        hellinger: h2.sqrt(),
        hellinger_squared: h2,
        bound: hellinger_bound(&p, &q)?,
    };
    write_json(&io.out, &out)?;
    Ok(format!("H^2 = {:.6e}, bound = {:.6e}", out.hellinger_squared, out.bound))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecayConfig {
    #[allow(dead_code)]
    schema_version: u32,
    spec: VolatilitySpec,
    delta: f64,
    n_list: Vec<usize>,
    #[serde(default)]
    max_slope: Option<f64>,
}

#[derive(Serialize)]
struct DecayRow {
    n: usize,
    #[serde(rename = "H2")]
    h2: f64,
    bound: f64,
    slope_so_far: Option<f64>,
}

fn cmd_decay(io: &Io) -> Outcome {
    let cfg: DecayConfig = read_config(&io.config)?;
    let rep = equivalence_decay_experiment(&cfg.spec, cfg.delta, &cfg.n_list)?;
    let rows: Vec<DecayRow> = rep
        .points
        .iter()
        .map(|p| DecayRow {
            n: p.n,
            h2: p.h2,
            bound: p.bound,
            slope_so_far: p.slope_so_far,
        })
        .collect();
    write_csv(&io.out, &rows)?;
    let slope = rep.slope.unwrap_or(f64::NAN);
    let line = format!("{} sizes, log-log slope {slope:.4}", rows.len());
    match cfg.max_slope {
        Some(m) if !(slope <= m) => Err(Failure::Acceptance(format!("{line}; acceptance failed: slope above {m}"))),
        _ => Ok(line),
    }
}

fn default_ks_samples() -> usize {
    100_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CounterexampleConfig {
    #[allow(dead_code)]
    schema_version: u32,
    n_list: Vec<u64>,
    /// Sample size of the increment comparison.
    #[serde(default = "default_ks_samples")]
    ks_samples: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct GapRow {
    n: u64,
    gap: f64,
    gap_times_sqrt_n: f64,
}

fn cmd_counterexample(io: &Io, seed: Option<u64>) -> Outcome {
    let cfg: CounterexampleConfig = read_config(&io.config)?;
    if cfg.ks_samples < 2 {
        return Err(anyhow!("field `ks_samples` must be at least 2").into());
    }
    let rows = cfg
        .n_list
        .iter()
        .map(|&n| {
            let gap = counterexample_signal_gap(n)?;
            Ok(GapRow {
                n,
                gap,
                gap_times_sqrt_n: gap * (n as f64).sqrt(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_csv(&io.out, &rows)?;
    let m = cfg.ks_samples;
    let seed = seed.unwrap_or(cfg.seed);
    let osc = simulate_observations(&VolatilitySpec::oscillating(m as u64)?, m, 0.0, seed)?;
    let con = simulate_observations(&VolatilitySpec::constant(1.0)?, m, 0.0, seed.wrapping_add(1))?;
    let d = ks_two_sample(&osc.increments(), &con.increments())?;
    Ok(format!(
        "{} gaps; increments of oscillating vs constant volatility: KS {d:.4}, p-value {:.3}",
        rows.len(),
        ks_two_sample_pvalue(d, m, m)
    ))
}

fn dispatch(cli: &Cli) -> Outcome {
    let (seed, threads) = (cli.seed, cli.threads);
    match &cli.command {
        Command::Simulate(io) => cmd_simulate(io, seed),
        Command::Spectral(io) => cmd_spectral(io),
        Command::Spot(io) => cmd_spot(io),
        Command::Iv(io) => cmd_iv(io),
        Command::McIv(io) => cmd_mc_iv(io, seed, threads),
        Command::Rate(io) => cmd_rate(io, seed, threads),
        Command::Fisher(io) => cmd_fisher(io),
        Command::Hellinger(io) => cmd_hellinger(io),
        Command::Decay(io) => cmd_decay(io),
        Command::Counterexample(io) => cmd_counterexample(io, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(line) => {
            eprintln!("{line}");
            ExitCode::SUCCESS
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
