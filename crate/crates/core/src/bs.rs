//! Linear Black–Scholes valuation: a quadrature reference and a
//! Crank–Nicolson solver in log-price.

use crate::error::{Error, Result};
use crate::grid::{GridKind, SpaceGrid, TimeGrid};
use crate::payoff::Payoff;
use crate::quadrature::{adaptive_normal_expectation, adaptive_piecewise_normal_expectation};
use crate::surfaces::ValueSurface;
use crate::tridiag;

/// Number of fully implicit steps taken next to maturity.
pub const RANNACHER_STEPS: usize = 2;

const QUAD_MAX_NODES: usize = 256;
const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BSParams {
    pub rate: f64,
    pub sigma: f64,
    pub maturity: f64,
}

impl BSParams {
    pub fn new(rate: f64, sigma: f64, maturity: f64) -> Result<Self> {
        let p = Self { rate, sigma, maturity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("rate must be >= 0, got {}", self.rate)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(Error::InvalidParameter(format!("maturity must be > 0, got {}", self.maturity)));
        }
        Ok(())
    }

    /// Log-price drift `r − σ²/2`.
    pub fn log_drift(&self) -> f64 {
        self.rate - 0.5 * self.sigma * self.sigma
    }
}

/// `e^{-r(T-t)} E[g(x exp((r−σ²/2)(T−t) + σ√(T−t) Z))]`, starting from
/// `quad_points` nodes and doubling until successive values agree to 1e-10.
/// Smooth payoffs use Gauss–Hermite; payoffs with kinks use Gauss–Legendre
/// on the pieces between them.
pub fn euro_closed_form(g: &Payoff, p: &BSParams, t: f64, x: f64, quad_points: usize) -> Result<f64> {
    p.validate()?;
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("state must be > 0, got {x}")));
    }
    if !(t >= 0.0 && t <= p.maturity) {
        return Err(Error::InvalidParameter(format!("time {t} outside [0, {}]", p.maturity)));
    }
    let tau = p.maturity - t;
    let disc = (-p.rate * tau).exp();
    if tau == 0.0 {
        return Ok(g.eval(x));
    }
    let drift = p.log_drift() * tau;
    let vol = p.sigma * tau.sqrt();
    let integrand = |z: f64| g.eval(x * (drift + vol * z).exp());
    let breaks: Vec<f64> = g
        .kinks()
        .into_iter()
        .filter(|&k| k > 0.0)
        .map(|k| ((k / x).ln() - drift) / vol)
        .collect();
    let max_nodes = QUAD_MAX_NODES.max(quad_points);
    let (mean, _) = if breaks.is_empty() {
        adaptive_normal_expectation(quad_points.max(2), max_nodes, QUAD_TOL, integrand)
    } else {
        adaptive_piecewise_normal_expectation(&breaks, quad_points.max(2), max_nodes, QUAD_TOL, integrand)
    };
    Ok(disc * mean)
}

/// Implicit weight of the step from `t_{i+1}` to `t_i`: 1 for the Rannacher
/// steps next to maturity, 1/2 otherwise.
pub fn cn_weight(n_steps: usize, i: usize) -> f64 {
    if i + RANNACHER_STEPS >= n_steps {
        1.0
    } else {
        0.5
    }
}

/// Cell Péclet number `|r − σ²/2| Δy / σ²`.
pub fn peclet(p: &BSParams, xgrid: &SpaceGrid) -> f64 {
    p.log_drift().abs() * xgrid.step() / (p.sigma * p.sigma)
}

/// Dirichlet value at log-coordinate `y` with time-to-maturity `tau`:
/// the discounted payoff at the forward `x e^{r tau}`.
pub fn boundary_value(g: &Payoff, p: &BSParams, y: f64, tau: f64) -> f64 {
    (-p.rate * tau).exp() * g.eval((y + p.rate * tau).exp())
}

/// Coefficients `(a, b, c)` of the undiscounted log-space generator
/// `a u_{k-1} + b u_k + c u_{k+1}`; the `−r u` term is integrated exactly.
pub fn stencil(p: &BSParams, h: f64) -> (f64, f64, f64) {
    let diff = 0.5 * p.sigma * p.sigma / (h * h);
    let adv = p.log_drift() / (2.0 * h);
    (diff - adv, -2.0 * diff, diff + adv)
}

pub fn euro_pde_solve(g: &Payoff, p: &BSParams, tgrid: &TimeGrid, xgrid: &SpaceGrid) -> Result<ValueSurface> {
    p.validate()?;
    if xgrid.kind() != GridKind::LogPrice {
        return Err(Error::InvalidParameter(format!(
            "Black–Scholes solver needs a log-price grid, got {}",
            xgrid.kind().name()
        )));
    }
    if (tgrid.horizon() - p.maturity).abs() > 1e-12 * p.maturity {
        return Err(Error::GridMismatch(format!(
            "time grid horizon {} differs from maturity {}",
            tgrid.horizon(),
            p.maturity
        )));
    }
    let pe = peclet(p, xgrid);
    if pe > 1.0 {
        log::warn!("cell Péclet number {pe:.3} exceeds 1; refine the space grid");
    }
    let nx = xgrid.len();
    let nt = tgrid.n_nodes();
    let n = tgrid.n_steps();
    let dt = tgrid.dt();
    let (a, b, c) = stencil(p, xgrid.step());
    let coords = xgrid.coords();

    // undiscounted value e^{r(T-t)} v is stepped, then rows are discounted
    let mut rows = vec![Vec::new(); nt];
    rows[n] = xgrid.states().iter().map(|&x| g.eval(x)).collect();
    let mut undisc = rows[n].clone();
    let m = nx - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in (0..n).rev() {
        let w = cn_weight(n, i);
        let tau = p.maturity - tgrid.node(i);
        let left = g.eval((coords[0] + p.rate * tau).exp());
        let right = g.eval((coords[nx - 1] + p.rate * tau).exp());
        for j in 0..m {
            let k = j + 1;
            let lu = a * undisc[k - 1] + b * undisc[k] + c * undisc[k + 1];
            rhs[j] = undisc[k] + (1.0 - w) * dt * lu;
            lower[j] = -w * dt * a;
            diag[j] = 1.0 - w * dt * b;
            upper[j] = -w * dt * c;
        }
        rhs[0] += w * dt * a * left;
        rhs[m - 1] += w * dt * c * right;
        let interior = tridiag::solve(&lower, &diag, &upper, &rhs)?;
        undisc.clear();
        undisc.push(left);
        undisc.extend(interior);
        undisc.push(right);
        let disc = (-p.rate * tau).exp();
        let row: Vec<f64> = undisc.iter().map(|u| disc * u).collect();
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time_index: i,
                space_index: k,
                value: row[k],
            });
        }
        rows[i] = row;
    }
    Ok(ValueSurface::from_rows_unchecked(*tgrid, *xgrid, rows, p.rate))
}

/// Default log grid `[ln K − 6σ√T, ln K + 6σ√T]` with `n_points` nodes.
pub fn default_grid(p: &BSParams, center: f64, n_points: usize) -> Result<SpaceGrid> {
    SpaceGrid::log_price_around(center, p.sigma, p.maturity, n_points)
}
