//! Small numerical kernels shared by the modules: adaptive Simpson
//! quadrature, golden-section maximisation and trigonometric helpers that
//! reduce their argument exactly.

use std::f64::consts::PI;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute tolerance `tol`.
///
/// The interval is first cut into `pieces` equal parts so that periodic
/// integrands cannot fool the initial error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, pieces: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = pieces.max(1);
    let width = (b - a) / pieces as f64;
    let piece_tol = tol / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let lo = a + p as f64 * width;
        let hi = if p + 1 == pieces { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(f, lo, hi, flo, fmid, fhi, whole, piece_tol, MAX_DEPTH);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Golden-section search for the maximiser of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// `sin(pi * x)` with the argument reduced modulo 2 before scaling.
pub fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor();
    (PI * r).sin()
}

/// `cos(pi * x)` with the argument reduced modulo 2 before scaling.
pub fn cos_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor();
    (PI * r).cos()
}

/// Midpoint Riemann sum with `points` cells; used by tests as a brute-force oracle.
pub fn midpoint_sum<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    let w = (b - a) / points as f64;
    let mut acc = 0.0;
    for i in 0..points {
        acc += f(a + (i as f64 + 0.5) * w);
    }
    acc * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_and_oscillations() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12, 1);
        assert!((v - 4.0).abs() < 1e-12);
        // cos(64 pi x) vanishes at every sample of a single Simpson panel on [0,1]
        let v = adaptive_simpson(&|x: f64| 1.0 + cos_pi(64.0 * x), 0.0, 1.0, 1e-12, 64);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|x| -(x - 1.234).powi(2), 0.0, 5.0, 1e-10);
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn reduced_trig_is_exact_at_integers() {
        assert!(sin_pi(4096.0).abs() < 1e-15);
        assert_eq!(cos_pi(3.0), -1.0);
    }
}
