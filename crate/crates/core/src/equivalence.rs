//! Distances between finite-dimensional Gaussian experiments and the
//! covariance matrices of the discrete and midpoint-symmetrised regression
//! models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::adaptive_simpson;
use crate::stats::ols_slope;
use crate::volmodel::VolatilitySpec;

/// Largest dimension handled with dense factorisations.
pub const MAX_DIM: usize = 4096;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let law = GaussianLaw { mean, cov };
        law.validate()?;
        Ok(law)
    }

    pub fn centered(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        GaussianLaw::new(DVector::zeros(d), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if d == 0 {
            return domain("Gaussian law needs dimension at least 1");
        }
        if d > MAX_DIM {
            return domain(format!("dimension {d} exceeds the dense limit {MAX_DIM}"));
        }
        if self.cov.nrows() != d || self.cov.ncols() != d {
            return domain(format!(
                "covariance is {}x{} but mean has length {d}",
                self.cov.nrows(),
                self.cov.ncols()
            ));
        }
        let scale = self.cov.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return domain(format!("covariance is not symmetric at ({i}, {j})"));
                }
            }
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return domain("Gaussian law has non-finite entries");
        }
        Ok(())
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.cov.clone()).ok_or_else(|| not_pd(&self.cov))
    }
}

fn not_pd(cov: &DMatrix<f64>) -> Error {
    let eig = cov.clone().symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    Error::Numeric(format!(
        "covariance is not positive definite: eigenvalues in [{lo:e}, {hi:e}], condition {:e}",
        hi.abs() / lo.abs()
    ))
}

fn check_dims(p: &GaussianLaw, q: &GaussianLaw) -> Result<()> {
    if p.dim() != q.dim() {
        return domain(format!("dimension mismatch: {} vs {}", p.dim(), q.dim()));
    }
    Ok(())
}

/// `L^-1 (S2 - S1) L^-T` where `S1 = L L^T`.
fn whitened_difference(l1: &Cholesky<f64, Dyn>, s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> DMatrix<f64> {
    let l = l1.l();
    let diff = s2 - s1;
    let left = l
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a positive diagonal");
    let e = l
        .solve_lower_triangular(&left.transpose())
        .expect("Cholesky factor has a positive diagonal");
    // symmetrise rounding noise
    (&e + e.transpose()) * 0.5
}

/// `dmu^T S^-1 dmu`.
fn mahalanobis(chol: &Cholesky<f64, Dyn>, dmu: &DVector<f64>) -> f64 {
    let z = chol
        .l()
        .solve_lower_triangular(dmu)
        .expect("Cholesky factor has a positive diagonal");
    z.norm_squared()
}

/// Squared Hellinger distance `H^2 = 2 - 2 BC` with the Bhattacharyya
/// coefficient `BC = det(S1)^1/4 det(S2)^1/4 det(S)^-1/2 exp(-dmu^T S^-1 dmu / 8)`,
/// `S = (S1 + S2) / 2`, evaluated through the eigenvalues of the whitened
/// covariance difference so that nearby laws keep full relative accuracy.
pub fn hellinger_squared(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    check_dims(p, q)?;
    let l1 = p.cholesky()?;
    q.cholesky()?;
    let e = whitened_difference(&l1, &p.cov, &q.cov);
    let eig = e.symmetric_eigenvalues();
    let mut log_bc = 0.0;
    for &ev in eig.iter() {
        if ev <= -1.0 {
            return Err(not_pd(&q.cov));
        }
        log_bc += 0.25 * ev.ln_1p() - 0.5 * (0.5 * ev).ln_1p();
    }
    let dmu = &p.mean - &q.mean;
    if dmu.amax() > 0.0 {
        let avg = (&p.cov + &q.cov) * 0.5;
        let chol = Cholesky::new(avg.clone()).ok_or_else(|| not_pd(&avg))?;
        log_bc -= mahalanobis(&chol, &dmu) / 8.0;
    }
    Ok((-2.0 * log_bc.exp_m1()).clamp(0.0, 2.0))
}

/// Hellinger distance in `[0, sqrt 2]`.
pub fn hellinger_exact(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    Ok(hellinger_squared(p, q)?.sqrt())
}

/// Upper bound for `H^2`: `|S1^-1/2 dmu|^2 / 4` for a mean shift,
/// `2 |S1^-1/2 (S2 - S1) S1^-1/2|_HS^2` for a covariance change, and twice
/// their sum when both differ.
///
/// The Frobenius norm is invariant under orthogonal factors, so the
/// triangular whitening gives the same value as the symmetric square root.
pub fn hellinger_bound(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    check_dims(p, q)?;
    let l1 = p.cholesky()?;
    let dmu = &p.mean - &q.mean;
    let mean_part = if dmu.amax() > 0.0 {
        0.25 * mahalanobis(&l1, &dmu)
    } else {
        0.0
    };
    let cov_part = if p.cov != q.cov {
        2.0 * whitened_difference(&l1, &p.cov, &q.cov).norm_squared()
    } else {
        0.0
    };
    Ok(match (mean_part > 0.0, cov_part > 0.0) {
        (true, true) => 2.0 * (mean_part + cov_part),
        _ => mean_part + cov_part,
    })
}

/// Symmetric inverse square root through an eigendecomposition.
pub fn inverse_sqrt_symmetric(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(not_pd(s));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt().recip()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn check_model_args(spec: &VolatilitySpec, n: usize, delta: f64, min_n: usize) -> Result<()> {
    spec.validate()?;
    if n < min_n || n > MAX_DIM {
        return domain(format!("n must lie in [{min_n}, {MAX_DIM}], got {n}"));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return domain(format!("noise level delta must be positive, got {delta}"));
    }
    Ok(())
}

fn build_from_levels(levels: &[f64], delta: f64) -> Result<GaussianLaw> {
    let n = levels.len();
    let d2 = delta * delta;
    let cov = DMatrix::from_fn(n, n, |k, l| levels[k.min(l)] + if k == l { d2 } else { 0.0 });
    GaussianLaw::centered(cov)
}

/// Covariance of `Y_k = X_{k/n} + delta xi_k`: `a(min(k, l) / n) + delta^2 1(k = l)`.
pub fn build_cov_regression(spec: &VolatilitySpec, n: usize, delta: f64) -> Result<GaussianLaw> {
    check_model_args(spec, n, delta, 1)?;
    let nf = n as f64;
    let levels: Vec<f64> = (1..=n).map(|k| spec.a_unchecked(k as f64 / nf)).collect();
    build_from_levels(&levels, delta)
}

/// Covariance of the local averages `n int a` over `[(2m-1)/2n, (2m+1)/2n]`,
/// `m = min(k, l)`, plus `delta^2 1(k = l)`. The last cell sticks out of
/// `[0, 1]` and uses `a(1 + s) = a(1 - s)`.
pub fn build_cov_symmetrized(spec: &VolatilitySpec, n: usize, delta: f64) -> Result<GaussianLaw> {
    check_model_args(spec, n, delta, 2)?;
    let nf = n as f64;
    let big_a = |t: f64| spec.a_integral_unchecked(t);
    let mut levels: Vec<f64> = (1..n)
        .map(|m| {
            let lo = (2 * m - 1) as f64 / (2.0 * nf);
            let hi = (2 * m + 1) as f64 / (2.0 * nf);
            nf * (big_a(hi) - big_a(lo))
        })
        .collect();
    let lo = (2 * n - 1) as f64 / (2.0 * nf);
    levels.push(2.0 * nf * (big_a(1.0) - big_a(lo)));
    build_from_levels(&levels, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    #[serde(rename = "H2")]
    pub h2: f64,
    pub bound: f64,
    /// Log-log slope of `H2` over the points up to this one.
    pub slope_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub spec: VolatilitySpec,
    pub delta: f64,
    pub points: Vec<DecayPoint>,
    pub slope: Option<f64>,
}

/// `H^2(N(0, Sigma_Y), N(0, Sigma_Ytilde))` and its bound along `n_list`.
pub fn equivalence_decay_experiment(spec: &VolatilitySpec, delta: f64, n_list: &[usize]) -> Result<DecayReport> {
    match spec {
        VolatilitySpec::Constant { .. } | VolatilitySpec::Sinusoid { .. } => {}
        other => {
            return Err(Error::Precondition(format!(
                "decay experiment needs a constant or sinusoid spec, got {other:?}"
            )))
        }
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("n values must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(n_list.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in n_list {
        let p = build_cov_regression(spec, n, delta)?;
        let q = build_cov_symmetrized(spec, n, delta)?;
        let h2 = hellinger_squared(&p, &q)?;
        let bound = hellinger_bound(&p, &q)?;
        xs.push((n as f64).ln());
        ys.push(h2.ln());
        let slope_so_far = if xs.len() >= 2 { Some(ols_slope(&xs, &ys)?) } else { None };
        points.push(DecayPoint {
            n,
            h2,
            bound,
            slope_so_far,
        });
    }
    let slope = points.last().and_then(|p| p.slope_so_far);
    Ok(DecayReport {
        spec: spec.clone(),
        delta,
        points,
        slope,
    })
}

/// `int_0^1 (sqrt(2 sigma_n) - sqrt 2)^2 dt` for the oscillating volatility
/// `sigma_n^2 = 1 + n^-1/4 cos(pi n t)`.
pub fn counterexample_signal_gap(n: u64) -> Result<f64> {
    if n < 2 {
        return domain(format!("counterexample needs n >= 2, got {n}"));
    }
    VolatilitySpec::oscillating(n)?;
    // the integrand depends on t only through cos(pi n t); substituting
    // u = n t and folding by the period-2 symmetry leaves one half period
    let amp = (n as f64).powf(-0.25);
    let s2 = 2f64.sqrt();
    let f = |u: f64| {
        let root = s2 * (1.0 + amp * (std::f64::consts::PI * u).cos()).powf(0.25);
        (root - s2).powi(2)
    };
    Ok(adaptive_simpson(&f, 0.0, 1.0, 1e-16, 16))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalar(m: f64, v: f64) -> GaussianLaw {
        GaussianLaw::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap()
    }

    fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * d as f64
    }

    #[test]
    fn scalar_closed_forms() {
        let s2: f64 = 2.0;
        let s = s2.sqrt();
        let h2 = hellinger_squared(&scalar(0.0, 1.0), &scalar(0.0, s2)).unwrap();
        assert!((h2 - (2.0 - (8.0 * s / (s2 + 1.0)).sqrt())).abs() < 1e-12);
        let h2 = hellinger_squared(&scalar(0.0, 1.0), &scalar(1.0, 1.0)).unwrap();
        assert!((h2 - 2.0 * (1.0 - (-1.0f64 / 8.0).exp())).abs() < 1e-12);
        assert_eq!(hellinger_exact(&scalar(0.3, 2.0), &scalar(0.3, 2.0)).unwrap(), 0.0);
        let far = hellinger_exact(&scalar(0.0, 1.0), &scalar(100.0, 1.0)).unwrap();
        assert!((far - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scalar_bounds_dominate() {
        for s2 in [0.8, 1.25, 2.0] {
            let (p, q) = (scalar(0.0, 1.0), scalar(0.0, s2));
            let b = hellinger_bound(&p, &q).unwrap();
            assert!((b - 2.0 * (s2 - 1.0f64).powi(2)).abs() < 1e-12);
            assert!(b >= hellinger_squared(&p, &q).unwrap());
        }
        assert_eq!(hellinger_bound(&scalar(0.0, 1.0), &scalar(0.0, 1.0)).unwrap(), 0.0);
        let b = hellinger_bound(&scalar(0.0, 4.0), &scalar(1.0, 4.0)).unwrap();
        assert!((b - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_laws() {
        let not_sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianLaw::centered(not_sym).is_err());
        let indefinite = GaussianLaw::centered(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        let ok = GaussianLaw::centered(DMatrix::identity(2, 2)).unwrap();
        match hellinger_squared(&indefinite, &ok) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("condition")),
            other => panic!("expected numeric error, got {other:?}"),
        }
        assert!(hellinger_squared(&ok, &scalar(0.0, 1.0)).is_err());
    }

    #[test]
    fn symmetric_root_gives_same_hs_norm() {
        let mut rng = crate::rng::rng_from_seed(4);
        let s1 = random_spd(&mut rng, 5);
        let s2 = &s1 + random_spd(&mut rng, 5) * 0.01;
        let p = GaussianLaw::centered(s1.clone()).unwrap();
        let q = GaussianLaw::centered(s2.clone()).unwrap();
        let r = inverse_sqrt_symmetric(&s1).unwrap();
        let sym = 2.0 * (&r * (&s2 - &s1) * &r).norm_squared();
        let b = hellinger_bound(&p, &q).unwrap();
        assert!(((b - sym) / sym).abs() < 1e-10);
    }

    #[test]
    fn regression_covariance() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let law = build_cov_regression(&spec, 2, 0.1).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.51, 0.5, 0.5, 1.01]);
        assert!((&law.cov - want).amax() < 1e-15);
        let s = VolatilitySpec::sinusoid(1.0, 0.5, 1, 0.0).unwrap();
        let law = build_cov_regression(&s, 64, 0.2).unwrap();
        let min_eig = law.cov.symmetric_eigenvalues().min();
        assert!(min_eig >= 0.04 * (1.0 - 1e-9));
    }

    #[test]
    fn symmetrized_covariance() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let n = 8;
        let law = build_cov_symmetrized(&spec, n, 0.1).unwrap();
        for k in 0..n {
            for l in 0..n {
                let m = k.min(l);
                let want = if m + 1 == n {
                    1.0 - 1.0 / (4.0 * n as f64)
                } else {
                    (m + 1) as f64 / n as f64
                };
                let want = want + if k == l { 0.01 } else { 0.0 };
                assert!((law.cov[(k, l)] - want).abs() < 1e-14, "({k},{l})");
            }
        }
        let s = VolatilitySpec::sinusoid(1.0, 0.5, 2, 0.4).unwrap();
        let n = 16;
        let law = build_cov_symmetrized(&s, n, 0.1).unwrap();
        let nf = n as f64;
        for m in 1..n {
            let lo = (2 * m - 1) as f64 / (2.0 * nf);
            let hi = (2 * m + 1) as f64 / (2.0 * nf);
            let q = nf * crate::quad::midpoint_sum(|t| s.a_unchecked(t), lo, hi, 1_000_000);
            assert!((law.cov[(m - 1, m)] - q).abs() < 1e-10);
        }
        let lo = 1.0 - 0.5 / nf;
        let reflected = nf * crate::quad::midpoint_sum(|t| s.a_unchecked(if t > 1.0 { 2.0 - t } else { t }), lo, 1.0 + 0.5 / nf, 1_000_000);
        assert!((law.cov[(n - 1, n - 1)] - 0.01 - reflected).abs() < 1e-10);
    }

    #[test]
    fn decay_for_constant_volatility() {
        let spec = VolatilitySpec::constant(1.0).unwrap();
        let rep = equivalence_decay_experiment(&spec, 1.0, &[64, 128, 256, 512]).unwrap();
        assert!(rep.slope.unwrap() <= -1.8, "{:?}", rep.slope);
        assert!(rep.points[0].slope_so_far.is_none());
        for p in &rep.points {
            assert!(p.bound >= p.h2);
        }
        let bad = VolatilitySpec::oscillating(64).unwrap();
        assert!(matches!(
            equivalence_decay_experiment(&bad, 1.0, &[64, 128]),
            Err(Error::Precondition(_))
        ));
        assert!(equivalence_decay_experiment(&spec, 1.0, &[128, 64]).is_err());
    }

    #[test]
    fn signal_gap_matches_substitution() {
        for n in [16u64, 256] {
            let gap = counterexample_signal_gap(n).unwrap();
            let amp = (n as f64).powf(-0.25);
            let s2 = 2f64.sqrt();
            let oracle = crate::quad::midpoint_sum(
                |u| (s2 * (1.0 + amp * u.cos()).powf(0.25) - s2).powi(2),
                0.0,
                std::f64::consts::PI,
                200_000,
            ) / std::f64::consts::PI;
            assert!(((gap - oracle) / oracle).abs() < 1e-8, "n={n}: {gap} vs {oracle}");
        }
        assert!(counterexample_signal_gap(1).is_err());
    }

    #[test]
    fn signal_gap_folding_holds_for_odd_n() {
        let s2 = 2f64.sqrt();
        for n in [7u64, 33, 128] {
            let spec = VolatilitySpec::oscillating(n).unwrap();
            let direct = adaptive_simpson(
                &|t| (s2 * spec.sigma2_unchecked(t).powf(0.25) - s2).powi(2),
                0.0,
                1.0,
                1e-15,
                4 * n as usize,
            );
            let gap = counterexample_signal_gap(n).unwrap();
            assert!(((gap - direct) / direct).abs() < 1e-9, "n={n}: {gap} vs {direct}");
        }
    }
}
