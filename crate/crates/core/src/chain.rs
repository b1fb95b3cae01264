//! Finite-state chains: linear valuation with running cost, the HJB ODE
//! over a generator family, Nisio iteration, stopping values and the
//! inverse map from embedded payoff back to terminal payoff.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{DiscreteOperator, Properness};
use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::surfaces::{default_plateau_tol, extract_embedding, Direction, EmbeddedPayoff, ValueSurface};

const ROW_SUM_TOL: f64 = 1e-12;

/// Rate matrix: non-negative off-diagonal entries, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    q: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "generator must be square and non-empty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        for i in 0..q.nrows() {
            let mut sum = 0.0;
            let mut scale = 0.0f64;
            for j in 0..q.ncols() {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite generator entry ({i},{j})")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::InvalidParameter(format!("negative off-diagonal rate {v} at ({i},{j})")));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
                return Err(Error::InvalidParameter(format!("row {i} sums to {sum}, not 0")));
            }
        }
        Ok(Self { q })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter("generator rows must all have length d".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn zero(d: usize) -> Self {
        Self { q: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Operator sup-norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.q
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `e^{tQ}`.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        (&self.q * t).exp()
    }
}

/// Finite family of generators of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    members: Vec<GeneratorMatrix>,
}

impl GeneratorSet {
    pub fn new(members: Vec<GeneratorMatrix>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidParameter("generator set is empty".into()));
        };
        let d = first.dim();
        if members.iter().any(|m| m.dim() != d) {
            return Err(Error::InvalidParameter("generators differ in dimension".into()));
        }
        Ok(Self { members })
    }

    pub fn singleton(q: GeneratorMatrix) -> Self {
        Self { members: vec![q] }
    }

    pub fn members(&self) -> &[GeneratorMatrix] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    /// `sup_Q (Q v)_x` for every state `x`.
    pub fn sup_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.members[0].matrix() * v;
        for m in &self.members[1..] {
            out = out.sup(&(m.matrix() * v));
        }
        out
    }

    /// Seeded random family with `‖Q‖_∞ ≤ max_norm`.
    pub fn random(n: usize, d: usize, max_norm: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members = (0..n)
            .map(|_| {
                let mut q = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
                let rates: Vec<f64> = q.row_iter().map(|r| r.sum()).collect();
                let biggest = rates.iter().copied().fold(0.0, f64::max);
                let scale = if biggest > 0.0 { 0.5 * max_norm / biggest } else { 0.0 };
                q *= scale;
                for (i, r) in rates.iter().enumerate() {
                    q[(i, i)] = -r * scale;
                }
                GeneratorMatrix::new(q)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }
}

/// Values `v(t_i)_x` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainValue {
    pub tgrid: TimeGrid,
    pub values: Vec<DVector<f64>>,
}

impl ChainValue {
    pub fn at(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn to_surface(&self) -> Result<ValueSurface> {
        let d = self.values[0].len();
        let xg = SpaceGrid::finite_state(d)?;
        let vals = self.values.iter().flat_map(|v| v.iter().copied()).collect();
        ValueSurface::new(self.tgrid, xg, vals, 0.0)
    }
}

/// Running cost `c(t, x)` with states indexed from 0.
pub type RunningCost<'a> = &'a (dyn Fn(f64, usize) -> f64 + Sync);

fn check_len(g: &[f64], d: usize) -> Result<()> {
    if g.len() != d {
        return Err(Error::GridMismatch(format!("payoff has {} entries for {d} states", g.len())));
    }
    Ok(())
}

fn rk4_backward(
    tgrid: &TimeGrid,
    g: &[f64],
    rhs: impl Fn(f64, &DVector<f64>) -> DVector<f64>,
) -> Vec<DVector<f64>> {
    // integrates dv/dt = -rhs(t, v) from T down to 0
    let n = tgrid.n_steps();
    let dt = tgrid.dt();
    let mut values = vec![DVector::zeros(g.len()); n + 1];
    values[n] = DVector::from_column_slice(g);
    for i in (0..n).rev() {
        let t = tgrid.node(i + 1);
        let v = &values[i + 1];
        let k1 = rhs(t, v);
        let k2 = rhs(t - 0.5 * dt, &(v + &k1 * (0.5 * dt)));
        let k3 = rhs(t - 0.5 * dt, &(v + &k2 * (0.5 * dt)));
        let k4 = rhs(t - dt, &(v + &k3 * dt));
        values[i] = v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    values
}

/// Solves `∂_t v + Q v + c = 0`, `v(T) = g`: exact exponential steps without
/// cost, RK4 with cost.
pub fn linear_chain_value(
    q: &GeneratorMatrix,
    g: &[f64],
    cost: Option<RunningCost<'_>>,
    tgrid: &TimeGrid,
) -> Result<ChainValue> {
    check_len(g, q.dim())?;
    let values = match cost {
        None => {
            let step = q.exp(tgrid.dt());
            let n = tgrid.n_steps();
            let mut values = vec![DVector::zeros(g.len()); n + 1];
            values[n] = DVector::from_column_slice(g);
            for i in (0..n).rev() {
                values[i] = &step * &values[i + 1];
            }
            values
        }
        Some(c) => rk4_backward(tgrid, g, |t, v| {
            let mut out = q.matrix() * v;
            for (x, o) in out.iter_mut().enumerate() {
                *o += c(t, x);
            }
            out
        }),
    };
    Ok(ChainValue { tgrid: *tgrid, values })
}

/// RK4 for `∂_t v + sup_Q Q v = 0`, `v(T) = g`.
pub fn hjb_ode_solve(set: &GeneratorSet, g: &[f64], tgrid: &TimeGrid) -> Result<ChainValue> {
    check_len(g, set.dim())?;
    let values = rk4_backward(tgrid, g, |_, v| set.sup_apply(v));
    Ok(ChainValue { tgrid: *tgrid, values })
}

/// `2^depth` compositions of `w ↦ sup_Q e^{(T/2^depth) Q} w` applied to `g`.
pub fn nisio_iterate(set: &GeneratorSet, g: &[f64], horizon: f64, depth: u32) -> Result<DVector<f64>> {
    check_len(g, set.dim())?;
    if depth > 30 {
        return Err(Error::InvalidParameter(format!("depth {depth} too large")));
    }
    let steps = 1usize << depth;
    let h = horizon / steps as f64;
    let exps: Vec<DMatrix<f64>> = set.members().iter().map(|q| q.exp(h)).collect();
    let mut w = DVector::from_column_slice(g);
    for _ in 0..steps {
        let mut next = &exps[0] * &w;
        for e in &exps[1..] {
            next = next.sup(&(e * &w));
        }
        w = next;
    }
    Ok(w)
}

/// Embedded payoff of a chain value on the finite-state grid.
pub fn chain_embed(v: &ChainValue, direction: Direction) -> Result<EmbeddedPayoff> {
    let s = v.to_surface()?;
    extract_embedding(&s, direction, default_plateau_tol(&s))
}

/// Backward induction `W(t_i) = clamp(h, sup_Q e^{ΔtQ} W(t_{i+1}))`, where the
/// clamp is `min(h, ·)` for the min-stopper and `max(h, ·)` for the max-stopper.
pub fn chain_stop_value(set: &GeneratorSet, h: &[f64], tgrid: &TimeGrid, stopper: Direction) -> Result<ChainValue> {
    check_len(h, set.dim())?;
    let exps: Vec<DMatrix<f64>> = set.members().iter().map(|q| q.exp(tgrid.dt())).collect();
    let hv = DVector::from_column_slice(h);
    let n = tgrid.n_steps();
    let mut values = vec![hv.clone(); n + 1];
    for i in (0..n).rev() {
        let mut cont = &exps[0] * &values[i + 1];
        for e in &exps[1..] {
            cont = cont.sup(&(e * &values[i + 1]));
        }
        values[i] = match stopper {
            Direction::Min => hv.inf(&cont),
            Direction::Max => hv.sup(&cont),
        };
    }
    Ok(ChainValue { tgrid: *tgrid, values })
}

/// The sup-generator as a residual operator (trapezoidal weighting).
#[derive(Debug, Clone)]
pub struct ChainOperator {
    pub set: GeneratorSet,
}

impl DiscreteOperator for ChainOperator {
    fn label(&self) -> String {
        format!("chain-sup(|S|={}, d={})", self.set.members().len(), self.set.dim())
    }

    fn apply(&self, _xgrid: &SpaceGrid, row: &[f64], k: usize) -> f64 {
        self.set
            .members()
            .iter()
            .map(|q| q.matrix().row(k).iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn implicit_weight(&self, _n_steps: usize, _i: usize) -> f64 {
        0.5
    }

    fn is_linear(&self) -> bool {
        self.set.members().len() == 1
    }

    fn properness(&self) -> Properness {
        Properness {
            monotone_in_value: true,
            degenerate_elliptic: true,
        }
    }

    fn discount_rate(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Steps of the time grid on which the extremum is bracketed.
    pub fine_steps: usize,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iters: 200,
            tol: 1e-10,
            fine_steps: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseResult {
    pub g: Vec<f64>,
    /// `‖ext_t(e^{tQ} g) − f‖_∞`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct ForwardMap {
    q: DMatrix<f64>,
    horizon: f64,
    nodes: Vec<f64>,
    exps: Vec<DMatrix<f64>>,
    direction: Direction,
}

impl ForwardMap {
    fn new(q: &GeneratorMatrix, horizon: f64, steps: usize, direction: Direction) -> Self {
        let nodes: Vec<f64> = (0..=steps).map(|j| horizon * j as f64 / steps as f64).collect();
        let exps = nodes.iter().map(|&t| q.exp(t)).collect();
        Self {
            q: q.matrix().clone(),
            horizon,
            nodes,
            exps,
            direction,
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        match self.direction {
            Direction::Min => a < b,
            Direction::Max => a > b,
        }
    }

    /// Extremum over `t ∈ [0, T]` of each component and the extremizing time.
    fn eval(&self, g: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let d = g.len();
        let paths: Vec<DVector<f64>> = self.exps.iter().map(|e| e * g).collect();
        let mut value = DVector::zeros(d);
        let mut times = vec![0.0; d];
        for x in 0..d {
            let mut j_best = 0;
            for j in 1..paths.len() {
                if self.better(paths[j][x], paths[j_best][x]) {
                    j_best = j;
                }
            }
            let mut t = self.nodes[j_best];
            let mut best = paths[j_best][x];
            // Newton on the time derivative around an interior grid extremum
            if j_best > 0 && j_best + 1 < self.nodes.len() {
                let lo = self.nodes[j_best - 1];
                let hi = self.nodes[j_best + 1];
                let mut s = t;
                for _ in 0..20 {
                    let e = (&self.q * s).exp() * g;
                    let d1 = (&self.q * &e)[x];
                    let d2 = (&self.q * (&self.q * &e))[x];
                    if d2 == 0.0 {
                        break;
                    }
                    let step = d1 / d2;
                    s = (s - step).clamp(lo, hi);
                    if step.abs() < 1e-15 * self.horizon {
                        break;
                    }
                }
                let cand = ((&self.q * s).exp() * g)[x];
                if !self.better(best, cand) {
                    best = cand;
                    t = s;
                }
            }
            value[x] = best;
            times[x] = t;
        }
        (value, times)
    }
}

/// Damped Gauss–Newton for `ext_t(e^{tQ} g) = f_target`, with the Jacobian
/// built from the active extremizing times.
pub fn embed_inverse(
    f_target: &[f64],
    q: &GeneratorMatrix,
    horizon: f64,
    direction: Direction,
    cfg: &InverseConfig,
) -> Result<InverseResult> {
    check_len(f_target, q.dim())?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
    }
    if !(cfg.damping > 0.0 && cfg.damping < 1.0) || cfg.fine_steps == 0 {
        return Err(Error::InvalidParameter("inverse solver needs damping in (0,1) and fine_steps > 0".into()));
    }
    let norm = q.norm_inf();
    if norm > 0.0 && horizon >= 1.0 / norm {
        log::warn!("horizon {horizon} >= 1/‖Q‖ = {}; no existence guarantee", 1.0 / norm);
    }
    let target = DVector::from_column_slice(f_target);
    let map = ForwardMap::new(q, horizon, cfg.fine_steps, direction);
    let mut g = target.clone();
    let (value, mut times) = map.eval(&g);
    let mut res = &value - &target;
    let mut res_norm = res.amax();
    for it in 0..cfg.max_iters {
        if res_norm <= cfg.tol {
            return Ok(InverseResult {
                g: g.iter().copied().collect(),
                residual: res_norm,
                iterations: it,
                converged: true,
            });
        }
        let d = g.len();
        let jac = DMatrix::from_fn(d, d, |x, y| (q.matrix() * times[x]).exp()[(x, y)]);
        let step = jac
            .clone()
            .lu()
            .solve(&(-&res))
            .or_else(|| jac.svd(true, true).solve(&(-&res), 1e-14).ok())
            .ok_or(Error::NoConvergence {
                method: "Gauss–Newton",
                iterations: it,
                residual: res_norm,
            })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &g + &step * alpha;
            let (tv, tt) = map.eval(&trial);
            let tr = &tv - &target;
            if tr.amax() < res_norm {
                g = trial;
                times = tt;
                res = tr;
                res_norm = res.amax();
                accepted = true;
                break;
            }
            alpha *= cfg.damping;
        }
        if !accepted {
            break;
        }
    }
    Ok(InverseResult {
        g: g.iter().copied().collect(),
        residual: res_norm,
        iterations: cfg.max_iters,
        converged: res_norm <= cfg.tol,
    })
}
