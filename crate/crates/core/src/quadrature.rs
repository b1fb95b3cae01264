//! Gauss–Hermite and Gauss–Legendre rules for expectations against the
//! standard normal density.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of one rule.
pub type Rule = Arc<(Vec<f64>, Vec<f64>)>;

/// Physicists' Gauss–Hermite nodes and weights for `∫ g(u) e^{-u²} du`,
/// cached per node count.
pub fn gauss_hermite(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&n) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(compute_rule(n));
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(n, Arc::clone(&rule));
    rule
}

/// Golub–Welsch eigenvalues as starting points, polished by Newton on the
/// orthonormal recurrence; weights from the derivative.
fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    guesses.sort_by(f64::total_cmp);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for mut z in guesses {
        let mut d = 1.0;
        for _ in 0..20 {
            let (p, dp) = hermite_orthonormal(n, z);
            d = dp;
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes.push(z);
        weights.push(2.0 / (d * d));
    }
    (nodes, weights)
}

/// Orthonormal Hermite polynomial of degree `n` at `z` and its derivative.
fn hermite_orthonormal(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let d = (2.0 * n as f64).sqrt() * p2;
    (p1, d)
}

/// `E[g(Z)]` for `Z ~ N(0,1)` with an `n`-point rule.
pub fn normal_expectation(n: usize, g: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_hermite(n);
    let (u, w) = (&rule.0, &rule.1);
    let s: f64 = u
        .iter()
        .zip(w)
        .map(|(&u, &w)| w * g(std::f64::consts::SQRT_2 * u))
        .sum();
    s / PI.sqrt()
}

/// Doubles the node count from `start` until successive values differ by less
/// than `tol` or `max_nodes` is reached. Returns the last value and node count.
pub fn adaptive_normal_expectation(
    start: usize,
    max_nodes: usize,
    tol: f64,
    g: impl Fn(f64) -> f64,
) -> (f64, usize) {
    let mut n = start.max(2);
    let mut prev = normal_expectation(n, &g);
    while n * 2 <= max_nodes {
        n *= 2;
        let next = normal_expectation(n, &g);
        if (next - prev).abs() < tol {
            return (next, n);
        }
        prev = next;
    }
    (prev, n)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, cached per node count.
pub fn gauss_legendre(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&n) {
        return Arc::clone(rule);
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        nodes.push(-z);
        weights.push(2.0 / ((1.0 - z * z) * dp * dp));
    }
    let rule = Arc::new((nodes, weights));
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(n, Arc::clone(&rule));
    rule
}

/// Legendre polynomial of degree `n` at `z` and its derivative.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// Half-width of the truncated line used by the piecewise rule; the normal
/// tail beyond it is below 1e-32.
pub const NORMAL_TRUNCATION: f64 = 12.0;

/// `E[g(Z)]` with an `n`-point Gauss–Legendre rule on each piece of
/// `[-L, L]` cut at `breaks`. Suited to `g` that is smooth between breaks.
pub fn piecewise_normal_expectation(breaks: &[f64], n: usize, g: impl Fn(f64) -> f64) -> f64 {
    let l = NORMAL_TRUNCATION;
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| b.abs() < l).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.insert(0, -l);
    cuts.push(l);
    let rule = gauss_legendre(n);
    let norm = (2.0 * PI).sqrt();
    cuts.windows(2)
        .map(|w| {
            let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            let s: f64 = rule
                .0
                .iter()
                .zip(&rule.1)
                .map(|(&u, &wt)| {
                    let z = mid + half * u;
                    wt * g(z) * (-0.5 * z * z).exp()
                })
                .sum();
            half * s / norm
        })
        .sum()
}

/// Doubling version of [`piecewise_normal_expectation`], as in
/// [`adaptive_normal_expectation`].
pub fn adaptive_piecewise_normal_expectation(
    breaks: &[f64],
    start: usize,
    max_nodes: usize,
    tol: f64,
    g: impl Fn(f64) -> f64,
) -> (f64, usize) {
    let mut n = start.max(2);
    let mut prev = piecewise_normal_expectation(breaks, n, &g);
    while n * 2 <= max_nodes {
        n *= 2;
        let next = piecewise_normal_expectation(breaks, n, &g);
        if (next - prev).abs() < tol {
            return (next, n);
        }
        prev = next;
    }
    (prev, n)
}

/// Composite trapezoid rule over samples `ys` at uniform spacing `h`.
pub fn trapezoid(ys: &[f64], h: f64) -> f64 {
    match ys.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (ys[0] + ys[n - 1]) + ys[1..n - 1].iter().sum::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [2, 5, 64, 128, 256] {
            let s: f64 = gauss_hermite(n).1.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n}: {s}");
        }
    }

    #[test]
    fn three_point_rule_matches_table() {
        let rule = gauss_hermite(3);
        let (u, w) = (&rule.0, &rule.1);
        let r = (1.5f64).sqrt();
        assert!((u[0] + r).abs() < 1e-14 && u[1].abs() < 1e-14 && (u[2] - r).abs() < 1e-14);
        assert!((w[1] - 2.0 * PI.sqrt() / 3.0).abs() < 1e-14);
    }

    #[test]
    fn normal_moments() {
        assert!((normal_expectation(64, |z| z * z) - 1.0).abs() < 1e-12);
        assert!((normal_expectation(64, |z| z.powi(4)) - 3.0).abs() < 1e-11);
        assert!((normal_expectation(64, |z| (0.3 * z).exp()) - (0.045f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = gauss_legendre(5);
        let s: f64 = rule.0.iter().zip(&rule.1).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((rule.1.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let big: f64 = gauss_legendre(512).1.iter().sum();
        assert!((big - 2.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_rule_handles_kinks() {
        // E[(Z - 0.3)^+] = φ(0.3) - 0.3 (1 - Φ(0.3))
        let phi = (-0.045f64).exp() / (2.0 * PI).sqrt();
        let tail = 0.5 * statrs::function::erf::erfc(0.3 / std::f64::consts::SQRT_2);
        let exact = phi - 0.3 * tail;
        let (v, _) = adaptive_piecewise_normal_expectation(&[0.3], 32, 512, 1e-13, |z| (z - 0.3).max(0.0));
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        assert!((trapezoid(&[0.0, 1.0, 2.0, 3.0], 1.0) - 4.5).abs() < 1e-15);
    }
}
