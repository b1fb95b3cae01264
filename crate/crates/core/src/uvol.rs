//! Uncertain drift/volatility HJB on an arithmetic state grid, optionally
//! with finite-activity jumps, and the game-value construction on top of it.

use std::ops::Range;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::embedding::{DiscreteOperator, Properness};
use crate::error::{Error, Result};
use crate::grid::{GridKind, SpaceGrid, TimeGrid};
use crate::payoff::Payoff;
use crate::quadrature::trapezoid;
use crate::surfaces::{
    build_regions, default_plateau_tol, extract_embedding, paste_value, Direction, EmbeddedPayoff, RegionMask,
    ValueSurface,
};
use crate::tridiag;

/// Jump-size law of a compound Poisson component.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpLaw {
    /// Piecewise-linear density on a uniform support.
    Table { zs: Vec<f64>, density: Vec<f64> },
    /// All jumps have the same size.
    Atom(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    pub intensity: f64,
    pub law: JumpLaw,
}

/// Quadrature points per jump-density table built from a normal law.
const NORMAL_TABLE_POINTS: usize = 401;

impl JumpSpec {
    pub fn new(intensity: f64, law: JumpLaw) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::InvalidParameter(format!("jump intensity {intensity} must be >= 0")));
        }
        match &law {
            JumpLaw::Table { zs, density } => {
                if zs.len() < 2 || zs.len() != density.len() {
                    return Err(Error::InvalidParameter("jump density table needs matching columns".into()));
                }
                let h = zs[1] - zs[0];
                if !(h > 0.0) || zs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
                    return Err(Error::InvalidParameter("jump support must be uniform and increasing".into()));
                }
                if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(Error::InvalidParameter("jump density must be finite and >= 0".into()));
                }
                let mass = trapezoid(density, h);
                if (mass - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!("jump density integrates to {mass}, not 1")));
                }
            }
            JumpLaw::Atom(z) => {
                if !z.is_finite() {
                    return Err(Error::InvalidParameter("jump atom must be finite".into()));
                }
            }
        }
        Ok(Self { intensity, law })
    }

    /// Normal jump sizes `N(mean, std²)` tabulated on `mean ± 8 std` and renormalized.
    pub fn normal(intensity: f64, mean: f64, std: f64) -> Result<Self> {
        if std == 0.0 {
            return Self::new(intensity, JumpLaw::Atom(mean));
        }
        let dist = Normal::new(mean, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        use statrs::distribution::Continuous;
        let n = NORMAL_TABLE_POINTS;
        let lo = mean - 8.0 * std;
        let h = 16.0 * std / (n - 1) as f64;
        let zs: Vec<f64> = (0..n).map(|j| lo + h * j as f64).collect();
        let mut density: Vec<f64> = zs.iter().map(|&z| dist.pdf(z)).collect();
        let mass = trapezoid(&density, h);
        density.iter_mut().for_each(|d| *d /= mass);
        Self::new(intensity, JumpLaw::Table { zs, density })
    }

    /// `∫ φ(z) F(dz)` by the trapezoid rule on the table.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        match &self.law {
            JumpLaw::Atom(z) => phi(*z),
            JumpLaw::Table { zs, density } => {
                let ys: Vec<f64> = zs.iter().zip(density).map(|(&z, &d)| phi(z) * d).collect();
                trapezoid(&ys, zs[1] - zs[0])
            }
        }
    }

    /// Largest absolute jump size.
    pub fn reach(&self) -> f64 {
        match &self.law {
            JumpLaw::Atom(z) => z.abs(),
            JumpLaw::Table { zs, .. } => zs[0].abs().max(zs[zs.len() - 1].abs()),
        }
    }
}

/// Truncation function `h(z) = z 1{|z| ≤ 1}`.
pub fn truncation(z: f64) -> f64 {
    if z.abs() <= 1.0 {
        z
    } else {
        0.0
    }
}

/// Rectangle of drifts and variances, with optional jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    pub drift: (f64, f64),
    pub vol2: (f64, f64),
    pub jump: Option<JumpSpec>,
}

impl UncertaintySet {
    pub fn new(drift: (f64, f64), vol2: (f64, f64), jump: Option<JumpSpec>) -> Result<Self> {
        if !(drift.0.is_finite() && drift.1.is_finite() && drift.0 <= drift.1) {
            return Err(Error::InvalidParameter(format!("drift interval {drift:?} invalid")));
        }
        if !(vol2.0 > 0.0 && vol2.0 <= vol2.1 && vol2.1.is_finite()) {
            return Err(Error::InvalidParameter(format!("variance interval {vol2:?} needs 0 < lo <= hi")));
        }
        Ok(Self { drift, vol2, jump })
    }

    pub fn singleton(drift: f64, vol2: f64) -> Result<Self> {
        Self::new((drift, drift), (vol2, vol2), None)
    }

    fn jump_intensity(&self) -> f64 {
        self.jump.as_ref().map_or(0.0, |j| j.intensity)
    }

    /// Drift shift `−λ ∫ h(z) F(dz)` from the compensator.
    fn compensator_drift(&self) -> f64 {
        self.jump
            .as_ref()
            .map_or(0.0, |j| -j.intensity * j.integrate(truncation))
    }
}

/// Central drift differences keep the scheme monotone when `c_lo ≥ |b| h`
/// for every drift in the set; otherwise the drift is upwinded.
fn central_drift(set: &UncertaintySet, shift: f64, h: f64) -> bool {
    let b = (set.drift.0 + shift).abs().max((set.drift.1 + shift).abs());
    set.vol2.0 >= b * h
}

/// Per-node controls `(b, c)` maximizing the diffusion–drift term.
fn optimal_control(set: &UncertaintySet, shift: f64, h: f64, row: &[f64], k: usize) -> (f64, f64) {
    let d2 = row[k + 1] - 2.0 * row[k] + row[k - 1];
    let c = if d2 > 0.0 { set.vol2.1 } else { set.vol2.0 };
    let central = central_drift(set, shift, h);
    let drift_term = |b: f64| {
        let b = b + shift;
        if central {
            b * (row[k + 1] - row[k - 1]) / (2.0 * h)
        } else if b >= 0.0 {
            b * (row[k + 1] - row[k]) / h
        } else {
            b * (row[k] - row[k - 1]) / h
        }
    };
    let b = if drift_term(set.drift.1) >= drift_term(set.drift.0) {
        set.drift.1
    } else {
        set.drift.0
    };
    (b + shift, c)
}

/// Three-point coefficients of the operator with fixed `(b, c)`.
fn control_stencil(b: f64, c: f64, h: f64, central: bool) -> (f64, f64, f64) {
    let diff = 0.5 * c / (h * h);
    let (a, cc) = if central {
        (diff - 0.5 * b / h, diff + 0.5 * b / h)
    } else {
        (diff + (-b).max(0.0) / h, diff + b.max(0.0) / h)
    };
    (a, -(a + cc), cc)
}

/// `λ (∫ u(x + z) F(dz) − u(x))` with linear interpolation, flat outside the grid.
fn jump_term(jump: &JumpSpec, xgrid: &SpaceGrid, row: &[f64], k: usize) -> f64 {
    if jump.intensity == 0.0 {
        return 0.0;
    }
    let x = xgrid.coord(k);
    let mean = jump.integrate(|z| xgrid.interpolate(row, x + z));
    jump.intensity * (mean - row[k])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    pub max_policy_sweeps: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self { max_policy_sweeps: 5 }
    }
}

/// Dirichlet value `e^{-rτ} max_b g(x + b τ)` at an edge of the grid.
pub fn hjb_boundary(g: &Payoff, set: &UncertaintySet, rate: f64, x: f64, tau: f64) -> f64 {
    let shift = set.compensator_drift();
    let best = [set.drift.0, set.drift.1]
        .iter()
        .map(|b| g.eval(x + (b + shift) * tau))
        .fold(f64::NEG_INFINITY, f64::max);
    (-rate * tau).exp() * best
}

/// Fully implicit policy iteration for `−∂_t v − sup_Θ[c/2 v_xx + b v_x + jumps] + r v = 0`.
/// The discount is integrated exactly and jumps are treated explicitly.
pub fn hjb_solve(
    g: &Payoff,
    set: &UncertaintySet,
    rate: f64,
    tgrid: &TimeGrid,
    xgrid: &SpaceGrid,
    cfg: &HjbConfig,
) -> Result<ValueSurface> {
    if xgrid.kind() != GridKind::Arithmetic {
        return Err(Error::InvalidParameter(format!(
            "HJB solver needs an arithmetic grid, got {}",
            xgrid.kind().name()
        )));
    }
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::InvalidParameter(format!("rate must be >= 0, got {rate}")));
    }
    let dt = tgrid.dt();
    let lambda = set.jump_intensity();
    if lambda * dt > 1.0 {
        return Err(Error::Stability(format!(
            "explicit jump step needs λΔt <= 1, got {}",
            lambda * dt
        )));
    }
    let nx = xgrid.len();
    let n = tgrid.n_steps();
    let h = xgrid.step();
    let shift = set.compensator_drift();
    let central = central_drift(set, shift, h);
    let coords = xgrid.coords();
    let mut rows = vec![Vec::new(); tgrid.n_nodes()];
    rows[n] = xgrid.states().iter().map(|&x| g.eval(x)).collect();
    let mut undisc = rows[n].clone();
    let m = nx - 2;
    let (mut lower, mut diag, mut upper, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for i in (0..n).rev() {
        let tau = tgrid.horizon() - tgrid.node(i);
        let growth = (rate * tau).exp();
        let left = growth * hjb_boundary(g, set, rate, coords[0], tau);
        let right = growth * hjb_boundary(g, set, rate, coords[nx - 1], tau);
        let base: Vec<f64> = (1..nx - 1)
            .map(|k| {
                let jump = set.jump.as_ref().map_or(0.0, |j| jump_term(j, xgrid, &undisc, k));
                undisc[k] + dt * jump
            })
            .collect();
        let mut current = undisc.clone();
        current[0] = left;
        current[nx - 1] = right;
        let mut policy: Vec<(f64, f64)> = (1..nx - 1).map(|k| optimal_control(set, shift, h, &undisc, k)).collect();
        let mut settled = false;
        for _ in 0..cfg.max_policy_sweeps {
            for j in 0..m {
                let (b, c) = policy[j];
                let (a, bb, cc) = control_stencil(b, c, h, central);
                lower[j] = -dt * a;
                diag[j] = 1.0 - dt * bb;
                upper[j] = -dt * cc;
                rhs[j] = base[j];
            }
            rhs[0] -= lower[0] * left;
            rhs[m - 1] -= upper[m - 1] * right;
            let sol = tridiag::solve(&lower, &diag, &upper, &rhs)?;
            let change = sol
                .iter()
                .zip(&current[1..nx - 1])
                .fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
            current[1..nx - 1].copy_from_slice(&sol);
            let next_policy: Vec<(f64, f64)> =
                (1..nx - 1).map(|k| optimal_control(set, shift, h, &current, k)).collect();
            let scale = current.iter().fold(1.0f64, |mx, v| mx.max(v.abs()));
            if next_policy == policy || change <= 1e-14 * scale {
                settled = true;
                break;
            }
            policy = next_policy;
        }
        if !settled {
            return Err(Error::NoConvergence {
                method: "policy iteration",
                iterations: cfg.max_policy_sweeps,
                residual: f64::NAN,
            });
        }
        undisc = current;
        let disc = 1.0 / growth;
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
    Ok(ValueSurface::from_rows_unchecked(*tgrid, *xgrid, rows, rate))
}

/// The sup-operator of the HJB scheme, fully implicit with explicit jumps.
#[derive(Debug, Clone)]
pub struct BachelierSupOperator {
    pub set: UncertaintySet,
    pub rate: f64,
}

impl DiscreteOperator for BachelierSupOperator {
    fn label(&self) -> String {
        format!(
            "bachelier-sup(b=[{}, {}], c=[{}, {}], r={})",
            self.set.drift.0, self.set.drift.1, self.set.vol2.0, self.set.vol2.1, self.rate
        )
    }

    fn apply(&self, xgrid: &SpaceGrid, row: &[f64], k: usize) -> f64 {
        let h = xgrid.step();
        let shift = self.set.compensator_drift();
        let (b, c) = optimal_control(&self.set, shift, h, row, k);
        let (a, bb, cc) = control_stencil(b, c, h, central_drift(&self.set, shift, h));
        a * row[k - 1] + bb * row[k] + cc * row[k + 1]
    }

    fn implicit_weight(&self, _n_steps: usize, _i: usize) -> f64 {
        1.0
    }

    fn is_linear(&self) -> bool {
        self.set.drift.0 == self.set.drift.1 && self.set.vol2.0 == self.set.vol2.1
    }

    fn properness(&self) -> Properness {
        Properness {
            monotone_in_value: self.rate >= 0.0,
            degenerate_elliptic: self.set.vol2.0 >= 0.0,
        }
    }

    fn discount_rate(&self) -> f64 {
        self.rate
    }

    fn stencil(&self, xgrid: &SpaceGrid, k: usize) -> Range<usize> {
        let reach = self
            .set
            .jump
            .as_ref()
            .filter(|j| j.intensity > 0.0)
            .map_or(1, |j| 1 + (j.reach() / xgrid.step()).ceil() as usize);
        k.saturating_sub(reach)..(k + reach + 1).min(xgrid.len())
    }

    fn tridiagonal(&self, xgrid: &SpaceGrid, _k: usize) -> Option<(f64, f64, f64)> {
        if self.is_linear() && self.set.jump_intensity() == 0.0 {
            let shift = self.set.compensator_drift();
            let h = xgrid.step();
            Some(control_stencil(
                self.set.drift.0 + shift,
                self.set.vol2.0,
                h,
                central_drift(&self.set, shift, h),
            ))
        } else {
            None
        }
    }

    fn residual(&self, u: &ValueSurface, i: usize, k: usize) -> f64 {
        let dt = u.tgrid().dt();
        let delta = (-self.rate * dt).exp();
        let jump = self
            .set
            .jump
            .as_ref()
            .map_or(0.0, |j| jump_term(j, u.xgrid(), u.row(i + 1), k));
        (u.get(i, k) - delta * u.get(i + 1, k)) / dt - self.apply(u.xgrid(), u.row(i), k) - delta * jump
    }
}

/// `h = sup_t v`, the pasted game value `w` and its regions.
pub fn build_game_value(v: &ValueSurface) -> Result<(EmbeddedPayoff, ValueSurface, RegionMask)> {
    let h = extract_embedding(v, Direction::Max, default_plateau_tol(v))?;
    let regions = build_regions(&h, v.tgrid())?;
    let w = paste_value(v, &h, &regions)?;
    Ok((h, w, regions))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstStopReport {
    pub violations: usize,
    pub first_violation: Option<(usize, usize)>,
}

/// Once `w(s, x)` reaches `h(x)` within `tol`, it must stay there for all later times.
pub fn check_const_stop(w: &ValueSurface, h: &EmbeddedPayoff, tol: f64) -> Result<ConstStopReport> {
    if !w.xgrid().same_as(h.xgrid()) {
        return Err(Error::GridMismatch("surface and payoff grids differ".into()));
    }
    let mut rep = ConstStopReport {
        violations: 0,
        first_violation: None,
    };
    for k in 0..w.n_space() {
        let hk = h.payoff()[k];
        let Some(s) = (0..w.n_times()).find(|&i| (w.get(i, k) - hk).abs() <= tol) else {
            continue;
        };
        for i in s + 1..w.n_times() {
            if (w.get(i, k) - hk).abs() > tol {
                rep.violations += 1;
                rep.first_violation.get_or_insert((i, k));
            }
        }
    }
    Ok(rep)
}

/// Put on a log-price state with Merton lognormal jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonCase {
    pub strike: f64,
    pub sigma: f64,
    pub rate: f64,
    pub maturity: f64,
    pub intensity: f64,
    pub jump_mean: f64,
    pub jump_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonReport {
    pub solver: f64,
    pub reference: f64,
    pub discrepancy: f64,
    pub series_terms: usize,
}

fn bs_put(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    let n = Normal::standard();
    let sd = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / sd;
    let d2 = d1 - sd;
    k * (-r * t).exp() * n.cdf(-d2) - s * n.cdf(-d1)
}

const MERTON_MAX_TERMS: usize = 500;
const MERTON_TAIL: f64 = 1e-10;

/// Merton series `Σ_k e^{-λ'T} (λ'T)^k / k! · BS_k` for the put at spot `s`.
pub fn merton_put(case: &MertonCase, s: f64) -> Result<(f64, usize)> {
    let kappa = (case.jump_mean + 0.5 * case.jump_std * case.jump_std).exp() - 1.0;
    let lam = case.intensity * (1.0 + kappa);
    let t = case.maturity;
    if lam == 0.0 {
        return Ok((bs_put(s, case.strike, case.rate, case.sigma, t), 1));
    }
    let mut weight = (-lam * t).exp();
    let mut mass = 0.0;
    let mut total = 0.0;
    for k in 0..MERTON_MAX_TERMS {
        if k > 0 {
            weight *= lam * t / k as f64;
        }
        let kf = k as f64;
        let sig = (case.sigma * case.sigma + kf * case.jump_std * case.jump_std / t).sqrt();
        let r_k = case.rate - case.intensity * kappa + kf * (1.0 + kappa).ln() / t;
        total += weight * bs_put(s, case.strike, r_k, sig, t);
        mass += weight;
        if 1.0 - mass < MERTON_TAIL && kf > lam * t {
            return Ok((total, k + 1));
        }
    }
    Err(Error::NoConvergence {
        method: "Merton series",
        iterations: MERTON_MAX_TERMS,
        residual: 1.0 - mass,
    })
}

/// Compares the jump-enabled solver on `x = ln S` with the Merton series at `(0, s0)`.
pub fn merton_validation(case: &MertonCase, tgrid: &TimeGrid, xgrid: &SpaceGrid, s0: f64) -> Result<MertonReport> {
    let c = case.sigma * case.sigma;
    let jump = if case.intensity > 0.0 {
        Some(JumpSpec::normal(case.intensity, case.jump_mean, case.jump_std)?)
    } else {
        None
    };
    let jump_drift = jump.as_ref().map_or(0.0, |j| {
        j.intensity * j.integrate(|z| z.exp() - 1.0 - truncation(z))
    });
    let b = case.rate - 0.5 * c - jump_drift;
    let set = UncertaintySet::new((b, b), (c, c), jump)?;
    let k = case.strike;
    let g = Payoff::from_fn(format!("log-put:{k}"), move |x: f64| (k - x.exp()).max(0.0));
    let v = hjb_solve(&g, &set, case.rate, tgrid, xgrid, &HjbConfig::default())?;
    let solver = v.interpolate(0, s0.ln());
    let (reference, series_terms) = merton_put(case, s0)?;
    Ok(MertonReport {
        solver,
        reference,
        discrepancy: (solver - reference).abs(),
        series_terms,
    })
}
