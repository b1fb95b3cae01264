// shared oracles for the integration tests
#![allow(dead_code)]

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Black–Scholes put `K e^{-rτ} N(−d₂) − S N(−d₁)`.
pub fn bs_put(s: f64, k: f64, r: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (k - s).max(0.0);
    }
    let n = Normal::standard();
    let sd = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / sd;
    let d2 = d1 - sd;
    k * (-r * tau).exp() * n.cdf(-d2) - s * n.cdf(-d1)
}

/// Bachelier call on `dX = √c dW`, zero rate.
pub fn bachelier_call(x: f64, k: f64, c: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (x - k).max(0.0);
    }
    let n = Normal::standard();
    let s = (c * tau).sqrt();
    let d = (x - k) / s;
    (x - k) * n.cdf(d) + s * n.pdf(d)
}
