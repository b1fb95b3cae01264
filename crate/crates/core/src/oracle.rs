//! Independent optimal-stopping computations: CRR binomial lattice,
//! projected SOR on the obstacle problem, a trinomial controller–stopper
//! game tree, and Monte Carlo stopped at the graph of θ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bs::BSParams;
use crate::embedding::{DiscreteOperator, StatePath};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridKind, SpaceGrid, TimeGrid};
use crate::payoff::Payoff;
use crate::surfaces::{Direction, EmbeddedPayoff, ValueSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    BinomialCrr,
    Trinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    /// The stopper maximizes: `max(payoff, continuation)`.
    MaximizeStop,
    /// The stopper minimizes: `min(payoff, continuation)`.
    MinimizeStop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSpec {
    pub n_steps: usize,
    pub kind: TreeKind,
    pub mode: StopMode,
    /// Volatility interval `[σ_lo, σ_hi]` of the controller.
    pub control: Option<(f64, f64)>,
}

impl TreeSpec {
    pub fn binomial(n_steps: usize, mode: StopMode) -> Self {
        Self {
            n_steps,
            kind: TreeKind::BinomialCrr,
            mode,
            control: None,
        }
    }

    pub fn trinomial(n_steps: usize, mode: StopMode, sigma_lo: f64, sigma_hi: f64) -> Self {
        Self {
            n_steps,
            kind: TreeKind::Trinomial,
            mode,
            control: Some((sigma_lo, sigma_hi)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("tree needs at least one step".into()));
        }
        if let Some((lo, hi)) = self.control {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("control interval [{lo}, {hi}] invalid")));
            }
        }
        Ok(())
    }
}

fn stop(mode: StopMode, payoff: f64, cont: f64) -> f64 {
    match mode {
        StopMode::MaximizeStop => payoff.max(cont),
        StopMode::MinimizeStop => payoff.min(cont),
    }
}

struct Crr {
    up: f64,
    prob: f64,
    disc: f64,
}

fn crr(p: &BSParams, tau: f64, n: usize) -> Result<Crr> {
    let dt = tau / n as f64;
    let up = (p.sigma * dt.sqrt()).exp();
    let down = 1.0 / up;
    let prob = ((p.rate * dt).exp() - down) / (up - down);
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidProbability { prob });
    }
    Ok(Crr {
        up,
        prob,
        disc: (-p.rate * dt).exp(),
    })
}

fn binomial(payoff: &Payoff, p: &BSParams, spec: &TreeSpec, t: f64, x: f64, early: bool) -> Result<f64> {
    p.validate()?;
    spec.validate()?;
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("state must be > 0, got {x}")));
    }
    if !(t >= 0.0 && t <= p.maturity) {
        return Err(Error::InvalidParameter(format!("time {t} outside [0, {}]", p.maturity)));
    }
    let tau = p.maturity - t;
    if tau == 0.0 {
        return Ok(payoff.eval(x));
    }
    let n = spec.n_steps;
    let c = crr(p, tau, n)?;
    let node = |step: usize, j: usize| x * c.up.powi(2 * j as i32 - step as i32);
    let mut vals: Vec<f64> = (0..=n).map(|j| payoff.eval(node(n, j))).collect();
    for step in (0..n).rev() {
        for j in 0..=step {
            let cont = c.disc * (c.prob * vals[j + 1] + (1.0 - c.prob) * vals[j]);
            vals[j] = if early {
                stop(spec.mode, payoff.eval(node(step, j)), cont)
            } else {
                cont
            };
        }
    }
    Ok(vals[0])
}

/// CRR lattice value of the stopping problem on `[t, T]` started at `x`.
pub fn american_binomial(payoff: &Payoff, p: &BSParams, spec: &TreeSpec, t: f64, x: f64) -> Result<f64> {
    binomial(payoff, p, spec, t, x, true)
}

/// Same lattice without early stopping.
pub fn european_binomial(payoff: &Payoff, p: &BSParams, spec: &TreeSpec, t: f64, x: f64) -> Result<f64> {
    binomial(payoff, p, spec, t, x, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PSORConfig {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PSORConfig {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

impl PSORConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidParameter(format!("omega {} outside (0, 2)", self.omega)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter("PSOR needs tol > 0 and max_iters > 0".into()));
        }
        Ok(())
    }
}

/// Obstacle, terminal row and Dirichlet columns of a discrete stopping problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleProblem {
    pub tgrid: TimeGrid,
    pub xgrid: SpaceGrid,
    pub direction: Direction,
    pub obstacle: Vec<f64>,
    pub terminal: Vec<f64>,
    /// Boundary values per time node.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl ObstacleProblem {
    /// Stopping problem for an embedded payoff: obstacle and terminal value
    /// `f`, boundaries from the discounted forward value of `f` clamped by `f`.
    pub fn from_embedding(f: &EmbeddedPayoff, rate: f64) -> Self {
        let tg = *f.tgrid();
        let xg = *f.xgrid();
        let pay = f.payoff_fn();
        let clamp = |ob: f64, v: f64| match f.direction() {
            Direction::Min => ob.max(v),
            Direction::Max => ob.min(v),
        };
        let side = |k: usize| -> Vec<f64> {
            let x = xg.state(k);
            let ob = f.payoff()[k];
            tg.nodes()
                .map(|t| {
                    let tau = tg.horizon() - t;
                    let fwd = if xg.kind() == GridKind::LogPrice {
                        x * (rate * tau).exp()
                    } else {
                        x
                    };
                    clamp(ob, (-rate * tau).exp() * pay.eval(fwd))
                })
                .collect()
        };
        Self {
            tgrid: tg,
            xgrid: xg,
            direction: f.direction(),
            obstacle: f.payoff().to_vec(),
            terminal: f.payoff().to_vec(),
            left: side(0),
            right: side(xg.len() - 1),
        }
    }

    /// Unconstrained problem (obstacle at a very negative proxy) with
    /// Black–Scholes boundaries; reproduces the European solver.
    pub fn unconstrained(g: &Payoff, p: &BSParams, tgrid: TimeGrid, xgrid: SpaceGrid) -> Self {
        let side = |k: usize| -> Vec<f64> {
            let y = xgrid.coord(k);
            tgrid
                .nodes()
                .map(|t| crate::bs::boundary_value(g, p, y, p.maturity - t))
                .collect()
        };
        Self {
            tgrid,
            xgrid,
            direction: Direction::Min,
            obstacle: vec![-1e300; xgrid.len()],
            terminal: xgrid.states().iter().map(|&x| g.eval(x)).collect(),
            left: side(0),
            right: side(xgrid.len() - 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsorOutput {
    pub surface: ValueSurface,
    /// Iterations used per time step, indexed by the time node solved for.
    pub iterations: Vec<usize>,
}

/// Backward stepping of the operator's scheme with the obstacle enforced at
/// every step by projected SOR.
pub fn psor_solve(problem: &ObstacleProblem, op: &dyn DiscreteOperator, cfg: &PSORConfig) -> Result<PsorOutput> {
    cfg.validate()?;
    let tg = problem.tgrid;
    let xg = problem.xgrid;
    let nx = xg.len();
    let n = tg.n_steps();
    if nx < 3 || problem.obstacle.len() != nx || problem.terminal.len() != nx {
        return Err(Error::GridMismatch("obstacle problem does not match its grid".into()));
    }
    if problem.left.len() != tg.n_nodes() || problem.right.len() != tg.n_nodes() {
        return Err(Error::GridMismatch("boundary columns do not match the time grid".into()));
    }
    let dt = tg.dt();
    let delta = (-op.discount_rate() * dt).exp();
    let coeffs: Vec<(f64, f64, f64)> = (1..nx - 1)
        .map(|k| {
            op.tridiagonal(&xg, k)
                .ok_or_else(|| Error::NotApplicable(format!("{} has no three-point stencil", op.label())))
        })
        .collect::<Result<_>>()?;
    let project = |ob: f64, v: f64| match problem.direction {
        Direction::Min => ob.max(v),
        Direction::Max => ob.min(v),
    };
    let mut rows = vec![Vec::new(); tg.n_nodes()];
    rows[n] = problem.terminal.clone();
    let mut iterations = vec![0; tg.n_nodes()];
    for i in (0..n).rev() {
        let w = op.implicit_weight(n, i);
        let next = &rows[i + 1];
        let mut diag = vec![0.0; nx];
        let mut lower = vec![0.0; nx];
        let mut upper = vec![0.0; nx];
        let mut rhs = vec![0.0; nx];
        for k in 1..nx - 1 {
            let (a, b, c) = coeffs[k - 1];
            lower[k] = -w * dt * a;
            diag[k] = 1.0 - w * dt * b;
            upper[k] = -w * dt * c;
            if lower[k] > 0.0 || upper[k] > 0.0 {
                return Err(Error::NotMMatrix {
                    row: k,
                    reason: "positive off-diagonal entry".into(),
                });
            }
            if diag[k] < lower[k].abs() + upper[k].abs() {
                return Err(Error::NotMMatrix {
                    row: k,
                    reason: "not diagonally dominant".into(),
                });
            }
            let lu = a * next[k - 1] + b * next[k] + c * next[k + 1];
            rhs[k] = delta * (next[k] + (1.0 - w) * dt * lu);
        }
        let mut u = next.clone();
        u[0] = problem.left[i];
        u[nx - 1] = problem.right[i];
        for k in 1..nx - 1 {
            u[k] = project(problem.obstacle[k], u[k]);
        }
        let mut converged = false;
        for it in 1..=cfg.max_iters {
            let mut change = 0.0f64;
            for k in 1..nx - 1 {
                let gs = (rhs[k] - lower[k] * u[k - 1] - upper[k] * u[k + 1]) / diag[k];
                let new = project(problem.obstacle[k], u[k] + cfg.omega * (gs - u[k]));
                change = change.max((new - u[k]).abs());
                u[k] = new;
            }
            if change < cfg.tol {
                iterations[i] = it;
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                method: "projected SOR",
                iterations: cfg.max_iters,
                residual: f64::NAN,
            });
        }
        rows[i] = u;
    }
    let surface = ValueSurface::new(tg, xg, rows.into_iter().flatten().collect(), op.discount_rate())?;
    Ok(PsorOutput { surface, iterations })
}

/// Arithmetic state dynamics `dX = b dt + σ dW` with discount `r` for the trinomial trees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArithmeticParams {
    pub rate: f64,
    pub drift: f64,
    pub maturity: f64,
}

struct Trinomial {
    dx: f64,
    disc: f64,
    /// `(p_up, p_mid, p_down)` per candidate volatility.
    probs: Vec<(f64, f64, f64)>,
}

fn trinomial(params: &ArithmeticParams, sigmas: &[f64], sigma_hi: f64, tau: f64, n: usize) -> Result<Trinomial> {
    let dt = tau / n as f64;
    let dx = sigma_hi * (3.0 * dt).sqrt();
    let b = params.drift;
    let probs = sigmas
        .iter()
        .map(|&s| {
            let q = (s * s * dt + b * b * dt * dt) / (2.0 * dx * dx);
            let skew = b * dt / (2.0 * dx);
            let (pu, pd) = (q + skew, q - skew);
            let pm = 1.0 - pu - pd;
            for prob in [pu, pm, pd] {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::InvalidProbability { prob });
                }
            }
            Ok((pu, pm, pd))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trinomial {
        dx,
        disc: (-params.rate * dt).exp(),
        probs,
    })
}

fn expectation(prob: (f64, f64, f64), up: f64, mid: f64, down: f64) -> f64 {
    prob.0 * up + prob.1 * mid + prob.2 * down
}

/// Candidate volatilities `σ_lo, σ_mid, σ_hi`, or `scan` equally spaced points when `scan > 3`.
pub fn control_candidates(lo: f64, hi: f64, scan: usize) -> Vec<f64> {
    if scan > 3 {
        (0..scan)
            .map(|j| lo + (hi - lo) * j as f64 / (scan - 1) as f64)
            .collect()
    } else {
        vec![lo, 0.5 * (lo + hi), hi]
    }
}

/// Controller–stopper game on a trinomial lattice: the controller picks the
/// volatility pointwise to maximize, the stopper applies `spec.mode`.
pub fn game_tree(
    h: &Payoff,
    params: &ArithmeticParams,
    spec: &TreeSpec,
    t: f64,
    x: f64,
    scan: usize,
) -> Result<f64> {
    spec.validate()?;
    let (lo, hi) = spec
        .control
        .ok_or_else(|| Error::InvalidParameter("game tree needs a control interval".into()))?;
    if spec.kind != TreeKind::Trinomial {
        return Err(Error::InvalidParameter("game tree needs the trinomial kind".into()));
    }
    let tau = params.maturity - t;
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} beyond maturity")));
    }
    if tau == 0.0 {
        return Ok(h.eval(x));
    }
    let n = spec.n_steps;
    let tri = trinomial(params, &control_candidates(lo, hi, scan), hi, tau, n)?;
    let node = |j: usize, step: usize| x + (j as f64 - step as f64) * tri.dx;
    let mut vals: Vec<f64> = (0..=2 * n).map(|j| h.eval(node(j, n))).collect();
    for step in (0..n).rev() {
        for j in 0..=2 * step {
            let (up, mid, down) = (vals[j + 2], vals[j + 1], vals[j]);
            let best = tri
                .probs
                .iter()
                .map(|&pr| expectation(pr, up, mid, down))
                .fold(f64::NEG_INFINITY, f64::max);
            vals[j] = stop(spec.mode, h.eval(node(j, step)), tri.disc * best);
        }
    }
    Ok(vals[0])
}

/// Trinomial stopping value with a fixed volatility.
pub fn trinomial_stop(
    payoff: &Payoff,
    params: &ArithmeticParams,
    sigma: f64,
    n_steps: usize,
    mode: StopMode,
    t: f64,
    x: f64,
) -> Result<f64> {
    if n_steps == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidParameter("trinomial tree needs steps and sigma > 0".into()));
    }
    let tau = params.maturity - t;
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} beyond maturity")));
    }
    if tau == 0.0 {
        return Ok(payoff.eval(x));
    }
    let tri = trinomial(params, &[sigma], sigma, tau, n_steps)?;
    let pr = tri.probs[0];
    let mut vals: Vec<f64> = (0..=2 * n_steps)
        .map(|j| payoff.eval(x + (j as f64 - n_steps as f64) * tri.dx))
        .collect();
    for step in (0..n_steps).rev() {
        for j in 0..=2 * step {
            let cont = tri.disc * expectation(pr, vals[j + 2], vals[j + 1], vals[j]);
            vals[j] = stop(mode, payoff.eval(x + (j as f64 - step as f64) * tri.dx), cont);
        }
    }
    Ok(vals[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Fraction of paths that met the graph of θ by `T`.
    pub crossing_rate: f64,
}

/// Running count, mean and centred sum of squares.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&self, o: &Moments) -> Moments {
        if o.n == 0.0 {
            return *self;
        }
        if self.n == 0.0 {
            return *o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }
}

/// Paths per independent random stream.
const BLOCK: usize = 1024;

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

/// Exact log-normal paths on `tgrid` from node `start_index`.
pub fn simulate_gbm_paths(
    p: &BSParams,
    tgrid: &TimeGrid,
    start_index: usize,
    x: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<StatePath>> {
    p.validate()?;
    if start_index >= tgrid.n_nodes() || !(x > 0.0) {
        return Err(Error::InvalidParameter("path start outside the grid".into()));
    }
    let dt = tgrid.dt();
    let drift = p.log_drift() * dt;
    let vol = p.sigma * dt.sqrt();
    let len = tgrid.n_nodes() - start_index;
    let n_blocks = n_paths.div_ceil(BLOCK);
    let blocks: Vec<Vec<StatePath>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = BLOCK.min(n_paths - b * BLOCK);
            (0..count)
                .map(|_| {
                    let mut states = Vec::with_capacity(len);
                    let mut s = x;
                    states.push(s);
                    for _ in 1..len {
                        let z: f64 = rng.sample(StandardNormal);
                        s *= (drift + vol * z).exp();
                        states.push(s);
                    }
                    StatePath { start_index, states }
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Time-grid slack when comparing nodes with interpolated θ.
const TIME_EPS: f64 = 1e-12;

/// Monte Carlo value of stopping at the first node `s ≥ θ(X_s)` and
/// collecting `e^{-r(τ−t)} f(X_τ)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_stop_at_theta(
    f: &GridFunction,
    p: &BSParams,
    theta: &GridFunction,
    tgrid: &TimeGrid,
    start_index: usize,
    x: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    p.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let eps = TIME_EPS * tgrid.horizon();
    let t0 = tgrid.node(start_index);
    if t0 > theta.eval(x) + eps {
        return Err(Error::Precondition(format!(
            "start time {t0} exceeds theta({x}) = {}",
            theta.eval(x)
        )));
    }
    let dt = tgrid.dt();
    let drift = p.log_drift() * dt;
    let vol = p.sigma * dt.sqrt();
    let n_blocks = n_paths.div_ceil(BLOCK);
    let sums: Vec<(Moments, usize)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = BLOCK.min(n_paths - b * BLOCK);
            let mut acc = (Moments::default(), 0);
            for _ in 0..count {
                let mut s = x;
                let mut j = start_index;
                let mut crossed = false;
                loop {
                    let t = tgrid.node(j);
                    if t + eps >= theta.eval(s) {
                        crossed = true;
                        break;
                    }
                    if j + 1 >= tgrid.n_nodes() {
                        break;
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    s *= (drift + vol * z).exp();
                    j += 1;
                }
                let val = (-p.rate * (tgrid.node(j) - t0)).exp() * f.eval(s);
                acc.0.push(val);
                acc.1 += crossed as usize;
            }
            acc
        })
        .collect();
    let (m, crossed) = sums
        .into_iter()
        .fold((Moments::default(), 0), |a, b| (a.0.merge(&b.0), a.1 + b.1));
    let n = n_paths as f64;
    let var = if n_paths > 1 { m.m2 / (n - 1.0) } else { 0.0 };
    Ok(McEstimate {
        mean: m.mean,
        stderr: (var / n).sqrt(),
        n_paths,
        crossing_rate: crossed as f64 / n,
    })
}
