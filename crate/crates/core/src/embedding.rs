//! Verification layer over value surfaces: order relations, region
//! exclusion, the ε-sandwich, free-boundary and variational residuals, fit
//! checks and hitting of the θ-graph.

use std::io::Write;
use std::ops::Range;

use crate::bs::{self, BSParams};
use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridKind, SpaceGrid, TimeGrid};
use crate::surfaces::{Direction, EmbeddedPayoff, RegionMask, ValueSurface};

/// Monotonicity metadata of an operator `F(x, r, p, X)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Properness {
    /// `−L` is nondecreasing in the value argument (non-negative discounting).
    pub monotone_in_value: bool,
    /// `−L` is nonincreasing in the Hessian argument.
    pub degenerate_elliptic: bool,
}

/// A spatial operator `L_h − r` together with the time weighting of the
/// scheme it belongs to. `apply` evaluates the undiscounted part `L_h`; the
/// discount enters through `δ = e^{−rΔt}`, so the residual at `(i, k)` is
/// `(u_i − δ u_{i+1})/Δt − [w L_h u_i + (1 − w) δ L_h u_{i+1}]`,
/// a consistent approximation of `−∂_t u − L_h u + r u`.
pub trait DiscreteOperator: Sync {
    fn label(&self) -> String;

    /// Undiscounted `L_h` applied to one time row at space node `k`.
    fn apply(&self, xgrid: &SpaceGrid, row: &[f64], k: usize) -> f64;

    /// Implicit weight of the step `t_{i+1} → t_i`.
    fn implicit_weight(&self, n_steps: usize, i: usize) -> f64;

    fn is_linear(&self) -> bool;

    fn properness(&self) -> Properness;

    fn discount_rate(&self) -> f64;

    /// Space nodes on which the residual is defined.
    fn interior(&self, xgrid: &SpaceGrid) -> Range<usize> {
        if xgrid.kind().is_continuum() {
            1..xgrid.len().saturating_sub(1)
        } else {
            0..xgrid.len()
        }
    }

    /// Space nodes read by `apply` at `k`.
    fn stencil(&self, xgrid: &SpaceGrid, k: usize) -> Range<usize> {
        if xgrid.kind().is_continuum() {
            k.saturating_sub(1)..(k + 2).min(xgrid.len())
        } else {
            0..xgrid.len()
        }
    }

    /// Three-point coefficients `(a, b, c)` of a linear undiscounted `L_h` at `k`, if any.
    fn tridiagonal(&self, _xgrid: &SpaceGrid, _k: usize) -> Option<(f64, f64, f64)> {
        None
    }

    fn residual(&self, u: &ValueSurface, i: usize, k: usize) -> f64 {
        let n = u.tgrid().n_steps();
        let dt = u.tgrid().dt();
        let w = self.implicit_weight(n, i);
        let delta = (-self.discount_rate() * dt).exp();
        let now = self.apply(u.xgrid(), u.row(i), k);
        let next = if w < 1.0 {
            self.apply(u.xgrid(), u.row(i + 1), k)
        } else {
            0.0
        };
        (u.get(i, k) - delta * u.get(i + 1, k)) / dt - (w * now + (1.0 - w) * delta * next)
    }
}

/// Log-space Black–Scholes generator with the Rannacher weighting of the solver.
#[derive(Debug, Clone, Copy)]
pub struct BlackScholesOperator {
    pub params: BSParams,
}

impl BlackScholesOperator {
    pub fn new(params: BSParams) -> Self {
        Self { params }
    }
}

impl DiscreteOperator for BlackScholesOperator {
    fn label(&self) -> String {
        format!("black-scholes(r={}, sigma={})", self.params.rate, self.params.sigma)
    }

    fn apply(&self, xgrid: &SpaceGrid, row: &[f64], k: usize) -> f64 {
        let (a, b, c) = bs::stencil(&self.params, xgrid.step());
        a * row[k - 1] + b * row[k] + c * row[k + 1]
    }

    fn implicit_weight(&self, n_steps: usize, i: usize) -> f64 {
        bs::cn_weight(n_steps, i)
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn properness(&self) -> Properness {
        Properness {
            monotone_in_value: self.params.rate >= 0.0,
            degenerate_elliptic: self.params.sigma > 0.0,
        }
    }

    fn discount_rate(&self) -> f64 {
        self.params.rate
    }

    fn tridiagonal(&self, xgrid: &SpaceGrid, _k: usize) -> Option<(f64, f64, f64)> {
        Some(bs::stencil(&self.params, xgrid.step()))
    }
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub metric: String,
    pub value: f64,
    pub node: Option<(usize, usize)>,
}

/// Writes rows as `check,metric,value,node_t,node_x`; absent nodes are empty cells.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> Result<()> {
    writeln!(out, "check,metric,value,node_t,node_x")?;
    for r in rows {
        let (nt, nx) = match r.node {
            Some((i, k)) => (i.to_string(), k.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{},{},{},{},{}", r.check, r.metric, fmt_f64(r.value), nt, nx)?;
    }
    Ok(())
}

fn row(check: &str, metric: &str, value: f64, node: Option<(usize, usize)>) -> ReportRow {
    ReportRow {
        check: check.into(),
        metric: metric.into(),
        value,
        node,
    }
}

/// Default sign tolerance `10 (Δt + Δx²) max(1, ‖u‖_∞)`.
pub fn default_sign_tol(u: &ValueSurface) -> f64 {
    let dx = u.xgrid().step();
    10.0 * (u.tgrid().dt() + dx * dx) * u.max_abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub tol: f64,
    /// `max (u − v)`, with its node.
    pub max_u_minus_v: f64,
    pub u_v_node: (usize, usize),
    pub u_v_violations: usize,
    pub max_v_minus_w: Option<f64>,
    pub v_w_node: Option<(usize, usize)>,
    pub v_w_violations: usize,
}

impl OrderReport {
    pub fn violations(&self) -> usize {
        self.u_v_violations + self.v_w_violations
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut out = vec![
            row("order", "max_u_minus_v", self.max_u_minus_v, Some(self.u_v_node)),
            row("order", "u_v_violations", self.u_v_violations as f64, None),
        ];
        if let Some(m) = self.max_v_minus_w {
            out.push(row("order", "max_v_minus_w", m, self.v_w_node));
            out.push(row("order", "v_w_violations", self.v_w_violations as f64, None));
        }
        out
    }
}

fn max_diff(a: &ValueSurface, b: &ValueSurface, tol: f64) -> (f64, (usize, usize), usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut node = (0, 0);
    let mut count = 0;
    for i in 0..a.n_times() {
        for k in 0..a.n_space() {
            let d = a.get(i, k) - b.get(i, k);
            if d > worst {
                worst = d;
                node = (i, k);
            }
            if d > tol {
                count += 1;
            }
        }
    }
    (worst, node, count)
}

/// Checks `u ≤ v + tol` and, if given, `v ≤ w + tol`.
pub fn check_order(u: &ValueSurface, v: &ValueSurface, w: Option<&ValueSurface>, tol: f64) -> Result<OrderReport> {
    u.ensure_same_grid(v)?;
    let (max_u_minus_v, u_v_node, u_v_violations) = max_diff(u, v, tol);
    let (max_v_minus_w, v_w_node, v_w_violations) = match w {
        Some(w) => {
            v.ensure_same_grid(w)?;
            let (m, n, c) = max_diff(v, w, tol);
            (Some(m), Some(n), c)
        }
        None => (None, None, 0),
    };
    Ok(OrderReport {
        tol,
        max_u_minus_v,
        u_v_node,
        u_v_violations,
        max_v_minus_w,
        v_w_node,
        v_w_violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionReport {
    pub violations: usize,
    pub nodes_in_c: usize,
    pub first_violation: Option<(usize, usize)>,
}

impl ExclusionReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        vec![
            row("region_exclusion", "violations", self.violations as f64, self.first_violation),
            row("region_exclusion", "nodes_in_continuation", self.nodes_in_c as f64, None),
        ]
    }
}

/// Nodes with `u` strictly off the payoff (beyond `tol`) must lie off the
/// extremizer sets.
pub fn check_region_exclusion(u: &ValueSurface, embedded: &EmbeddedPayoff, tol: f64) -> Result<ExclusionReport> {
    if u.tgrid() != embedded.tgrid() || !u.xgrid().same_as(embedded.xgrid()) {
        return Err(Error::GridMismatch("surface and embedded payoff grids differ".into()));
    }
    let sign = match embedded.direction() {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    let mut rep = ExclusionReport {
        violations: 0,
        nodes_in_c: 0,
        first_violation: None,
    };
    for i in 0..u.n_times() {
        for k in 0..u.n_space() {
            if sign * (u.get(i, k) - embedded.payoff()[k]) > tol {
                rep.nodes_in_c += 1;
                if embedded.is_extremizer(i, k) {
                    rep.violations += 1;
                    rep.first_violation.get_or_insert((i, k));
                }
            }
        }
    }
    Ok(rep)
}

/// `max (v − u)_+` over all nodes.
pub fn epsilon_sandwich(u: &ValueSurface, v: &ValueSurface) -> Result<f64> {
    u.ensure_same_grid(v)?;
    Ok(epsilon_sandwich_points(u.values(), v.values()))
}

/// `max (v − u)_+` over paired samples.
pub fn epsilon_sandwich_points(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).fold(0.0, |m, (a, b)| m.max(b - a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpReport {
    /// `max |R|` over continuation nodes at least one stencil from the boundary.
    pub max_eq_residual_on_c: f64,
    pub eq_node: Option<(usize, usize)>,
    pub eq_nodes_checked: usize,
    /// `min s R` over all interior nodes, with `s = +1` for min and `−1` for max.
    /// Non-negative values mean the inequality holds everywhere.
    pub min_inequality_residual: f64,
    pub inequality_node: (usize, usize),
}

impl FbpReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        vec![
            row("fbp_residual", "max_eq_residual_on_C", self.max_eq_residual_on_c, self.eq_node),
            row("fbp_residual", "eq_nodes_checked", self.eq_nodes_checked as f64, None),
            row(
                "fbp_residual",
                "min_inequality_residual",
                self.min_inequality_residual,
                Some(self.inequality_node),
            ),
        ]
    }
}

fn require_stencil(u: &ValueSurface) -> Result<()> {
    if u.xgrid().kind().is_continuum() && u.n_space() < 3 {
        return Err(Error::InvalidParameter("interior stencil needs at least 3 space points".into()));
    }
    Ok(())
}

fn direction_sign(direction: Direction) -> f64 {
    match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    }
}

/// Free-boundary residuals of a pasted surface.
pub fn fbp_residual(
    u: &ValueSurface,
    op: &dyn DiscreteOperator,
    regions: &RegionMask,
    direction: Direction,
) -> Result<FbpReport> {
    require_stencil(u)?;
    if regions.n_times() != u.n_times() || regions.n_space() != u.n_space() {
        return Err(Error::GridMismatch("regions and surface differ in size".into()));
    }
    let s = direction_sign(direction);
    let xg = *u.xgrid();
    let mut rep = FbpReport {
        max_eq_residual_on_c: 0.0,
        eq_node: None,
        eq_nodes_checked: 0,
        min_inequality_residual: f64::INFINITY,
        inequality_node: (0, 0),
    };
    for i in 0..u.n_times() - 1 {
        for k in op.interior(&xg) {
            let r = op.residual(u, i, k);
            if s * r < rep.min_inequality_residual {
                rep.min_inequality_residual = s * r;
                rep.inequality_node = (i, k);
            }
            let buffered = op
                .stencil(&xg, k)
                .all(|j| regions.is_continuation(i, j) && regions.is_continuation(i + 1, j));
            if regions.is_continuation(i, k) && buffered {
                rep.eq_nodes_checked += 1;
                if r.abs() > rep.max_eq_residual_on_c {
                    rep.max_eq_residual_on_c = r.abs();
                    rep.eq_node = Some((i, k));
                }
            }
        }
    }
    if !rep.min_inequality_residual.is_finite() {
        rep.min_inequality_residual = 0.0;
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalReport {
    pub max_abs: f64,
    pub node: (usize, usize),
}

impl VariationalReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        vec![row("variational_residual", "max_abs", self.max_abs, Some(self.node))]
    }
}

/// `max |min(s R, s (u − f))|` over interior nodes, with the embedded payoff as obstacle.
pub fn variational_residual(
    u: &ValueSurface,
    embedded: &EmbeddedPayoff,
    op: &dyn DiscreteOperator,
) -> Result<VariationalReport> {
    require_stencil(u)?;
    if !u.xgrid().same_as(embedded.xgrid()) {
        return Err(Error::GridMismatch("surface and payoff grids differ".into()));
    }
    let s = direction_sign(embedded.direction());
    let xg = *u.xgrid();
    let mut rep = VariationalReport {
        max_abs: 0.0,
        node: (0, 0),
    };
    for i in 0..u.n_times() - 1 {
        for k in op.interior(&xg) {
            let r = op.residual(u, i, k);
            let m = (s * r).min(s * (u.get(i, k) - embedded.payoff()[k])).abs();
            if m > rep.max_abs {
                rep.max_abs = m;
                rep.node = (i, k);
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub max_continuous_fit_gap: f64,
    pub max_smooth_fit_gap: f64,
    pub boundary_nodes_checked: usize,
    pub smooth_nodes_checked: usize,
    pub continuous_node: Option<(usize, usize)>,
    pub smooth_node: Option<(usize, usize)>,
}

impl FitReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        vec![
            row("fit_check", "max_continuous_fit_gap", self.max_continuous_fit_gap, self.continuous_node),
            row("fit_check", "max_smooth_fit_gap", self.max_smooth_fit_gap, self.smooth_node),
            row("fit_check", "boundary_nodes_checked", self.boundary_nodes_checked as f64, None),
        ]
    }
}

/// Continuous and smooth fit at the stopping nodes adjacent to the
/// continuation region. Limits from `C` use quadratic extrapolation through
/// three consecutive continuation nodes, in time (from earlier nodes) and in
/// space (from either side). The smooth-fit gap compares the one-sided space
/// derivative from `C` with the central derivative of `f`. The terminal row
/// is excluded.
pub fn fit_check(u: &ValueSurface, embedded: &EmbeddedPayoff, regions: &RegionMask) -> Result<FitReport> {
    if !u.xgrid().kind().is_continuum() {
        return Err(Error::NotApplicable("fit conditions need a continuum space grid".into()));
    }
    if regions.n_times() != u.n_times() || regions.n_space() != u.n_space() {
        return Err(Error::GridMismatch("regions and surface differ in size".into()));
    }
    if regions.boundary_nodes().is_empty() {
        return Err(Error::NotApplicable("no free boundary on this grid".into()));
    }
    let nx = u.n_space();
    let h = u.xgrid().step();
    let f = embedded.payoff();
    let in_c = |i: usize, k: isize| k >= 0 && (k as usize) < nx && regions.is_continuation(i, k as usize);
    let mut rep = FitReport {
        max_continuous_fit_gap: 0.0,
        max_smooth_fit_gap: 0.0,
        boundary_nodes_checked: 0,
        smooth_nodes_checked: 0,
        continuous_node: None,
        smooth_node: None,
    };
    for &(i, k) in regions.boundary_nodes() {
        if regions.is_continuation(i, k) || i + 1 >= u.n_times() {
            continue;
        }
        let mut checked = false;
        let mut limits = Vec::new();
        if i >= 3 && (1..=3).all(|d| regions.is_continuation(i - d, k)) {
            limits.push(3.0 * u.get(i - 1, k) - 3.0 * u.get(i - 2, k) + u.get(i - 3, k));
        }
        for dir in [-1isize, 1] {
            let ki = k as isize;
            if !(1..=3).all(|d| in_c(i, ki + dir * d)) {
                continue;
            }
            let at = |d: isize| u.get(i, (ki + dir * d) as usize);
            let (u1, u2, u3) = (at(1), at(2), at(3));
            limits.push(3.0 * u1 - 3.0 * u2 + u3);
            // one-sided derivative at k from nodes k+dir, k+2dir, k+3dir
            let du = dir as f64 * (-5.0 * u1 + 8.0 * u2 - 3.0 * u3) / (2.0 * h);
            if k >= 1 && k + 1 < nx {
                let df = (f[k + 1] - f[k - 1]) / (2.0 * h);
                let gap = (du - df).abs();
                rep.smooth_nodes_checked += 1;
                if gap > rep.max_smooth_fit_gap || rep.smooth_node.is_none() {
                    rep.max_smooth_fit_gap = gap;
                    rep.smooth_node = Some((i, k));
                }
            }
        }
        for lim in limits {
            checked = true;
            let gap = (lim - f[k]).abs();
            if gap > rep.max_continuous_fit_gap || rep.continuous_node.is_none() {
                rep.max_continuous_fit_gap = gap;
                rep.continuous_node = Some((i, k));
            }
        }
        if checked {
            rep.boundary_nodes_checked += 1;
        }
    }
    if rep.boundary_nodes_checked == 0 {
        return Err(Error::NotApplicable("no boundary node has three continuation neighbours".into()));
    }
    Ok(rep)
}

/// A discrete state path sampled on the time grid from node `start_index` on.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub start_index: usize,
    pub states: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingReport {
    pub n_paths: usize,
    pub n_crossed: usize,
    pub crossing_rate: f64,
    pub mean_crossing_time: f64,
    pub max_crossing_time: f64,
    /// First node with `s ≥ θ(X_s)` per path, `None` if never reached.
    pub crossing_index: Vec<Option<usize>>,
}

impl HittingReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        vec![
            row("hitting_path", "n_paths", self.n_paths as f64, None),
            row("hitting_path", "crossing_rate", self.crossing_rate, None),
            row("hitting_path", "mean_crossing_time", self.mean_crossing_time, None),
            row("hitting_path", "max_crossing_time", self.max_crossing_time, None),
        ]
    }
}

/// Slack allowed when comparing grid times with interpolated `θ` values.
const TIME_EPS: f64 = 1e-12;

/// First index `j` of each path with `t_j ≥ θ(X_{t_j})`.
pub fn hitting_path_check(theta: &GridFunction, tgrid: &TimeGrid, paths: &[StatePath]) -> Result<HittingReport> {
    let eps = TIME_EPS * tgrid.horizon();
    let mut crossing_index = Vec::with_capacity(paths.len());
    let mut sum = 0.0;
    let mut max_t = 0.0f64;
    for (p, path) in paths.iter().enumerate() {
        if path.states.is_empty() || path.start_index + path.states.len() > tgrid.n_nodes() {
            return Err(Error::InvalidParameter(format!("path {p} does not fit the time grid")));
        }
        let t0 = tgrid.node(path.start_index);
        if t0 > theta.eval(path.states[0]) + eps {
            return Err(Error::Precondition(format!(
                "path {p} starts at t={t0} beyond theta={}",
                theta.eval(path.states[0])
            )));
        }
        let hit = path
            .states
            .iter()
            .enumerate()
            .find(|(j, x)| tgrid.node(path.start_index + j) + eps >= theta.eval(**x))
            .map(|(j, _)| path.start_index + j);
        if let Some(j) = hit {
            let t = tgrid.node(j);
            sum += t;
            max_t = max_t.max(t);
        }
        crossing_index.push(hit);
    }
    let n_crossed = crossing_index.iter().filter(|c| c.is_some()).count();
    Ok(HittingReport {
        n_paths: paths.len(),
        n_crossed,
        crossing_rate: if paths.is_empty() {
            1.0
        } else {
            n_crossed as f64 / paths.len() as f64
        },
        mean_crossing_time: if n_crossed > 0 { sum / n_crossed as f64 } else { f64::NAN },
        max_crossing_time: max_t,
        crossing_index,
    })
}

/// Residual surface `R(i, k)` on interior nodes (zero elsewhere), for reporting.
pub fn residual_surface(u: &ValueSurface, op: &dyn DiscreteOperator) -> Result<ValueSurface> {
    require_stencil(u)?;
    let xg = *u.xgrid();
    let mut values = vec![0.0; u.values().len()];
    let nx = u.n_space();
    for i in 0..u.n_times() - 1 {
        for k in op.interior(&xg) {
            values[i * nx + k] = op.residual(u, i, k);
        }
    }
    ValueSurface::new(*u.tgrid(), xg, values, u.rate())
}

/// Guards operators that require a log-price grid.
pub fn require_kind(xgrid: &SpaceGrid, kind: GridKind) -> Result<()> {
    if xgrid.kind() != kind {
        return Err(Error::GridMismatch(format!(
            "expected a {} grid, got {}",
            kind.name(),
            xgrid.kind().name()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::Payoff;
    use crate::surfaces::{build_regions, extract_embedding, paste_value};

    fn bs_setup(nt: usize, nx: usize) -> (BSParams, TimeGrid, SpaceGrid) {
        let p = BSParams::new(0.05, 0.2, 1.0).unwrap();
        (p, TimeGrid::new(1.0, nt).unwrap(), bs::default_grid(&p, 100.0, nx).unwrap())
    }

    #[test]
    fn order_and_sandwich_basics() {
        let (_, tg, xg) = bs_setup(10, 11);
        let v = ValueSurface::from_fn(tg, xg, 0.0, |t, x| t + x.ln()).unwrap();
        let rep = check_order(&v, &v, Some(&v), 0.0).unwrap();
        assert_eq!(rep.violations(), 0);
        assert_eq!(epsilon_sandwich(&v, &v).unwrap(), 0.0);
        let u = v.map(|x| x - 0.01).unwrap();
        assert!((epsilon_sandwich(&u, &v).unwrap() - 0.01).abs() < 1e-12);
        let rep = check_order(&v, &u, None, 0.0).unwrap();
        assert_eq!(rep.u_v_violations, v.values().len());
    }

    /// Discrete counterpart of the rate: `(1 − e^{−rΔt})/Δt`.
    fn discrete_rate(r: f64, dt: f64) -> f64 {
        (1.0 - (-r * dt).exp()) / dt
    }

    #[test]
    fn constant_extension_has_residual_rc() {
        let (p, tg, xg) = bs_setup(20, 21);
        let op = BlackScholesOperator::new(p);
        let u = ValueSurface::from_fn(tg, xg, p.rate, |_, _| 3.0).unwrap();
        let e = extract_embedding(&u, Direction::Min, 0.0).unwrap();
        let r = build_regions(&e, &tg).unwrap();
        let rep = fbp_residual(&u, &op, &r, Direction::Min).unwrap();
        let dt = tg.dt();
        assert!((rep.min_inequality_residual - 3.0 * discrete_rate(0.05, dt)).abs() < 1e-12);
        assert!((rep.min_inequality_residual - 0.15).abs() <= 3.0 * 0.05 * 0.05 * dt);
        assert_eq!(rep.eq_nodes_checked, 0);
        let var = variational_residual(&u, &e, &op).unwrap();
        assert_eq!(var.max_abs, 0.0);
        assert!(matches!(fit_check(&u, &e, &r), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn solved_surface_has_small_residual() {
        let (p, tg, xg) = bs_setup(50, 101);
        let op = BlackScholesOperator::new(p);
        let v = bs::euro_pde_solve(&Payoff::put(100.0), &p, &tg, &xg).unwrap();
        let full = EmbeddedPayoff::with_theta(Direction::Min, tg, xg, vec![0.0; xg.len()], vec![1.0; xg.len()]).unwrap();
        let r = build_regions(&full, &tg).unwrap();
        let rep = fbp_residual(&v, &op, &r, Direction::Min).unwrap();
        assert!(rep.max_eq_residual_on_c < 1e-9, "{rep:?}");
    }

    #[test]
    fn parabola_fits_exactly() {
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let xg = SpaceGrid::arithmetic(0.0, 2.0, 21).unwrap();
        let v = ValueSurface::from_fn(tg, xg, 0.0, |t, x| (t - x / 2.0).powi(2) + x).unwrap();
        let e = extract_embedding(&v, Direction::Min, 1e-12).unwrap();
        let r = build_regions(&e, &tg).unwrap();
        let u = paste_value(&v, &e, &r).unwrap();
        let fit = fit_check(&u, &e, &r).unwrap();
        assert!(fit.max_continuous_fit_gap < 1e-12, "{fit:?}");
        assert!(fit.max_smooth_fit_gap < 1e-10, "{fit:?}");
        assert!(fit.boundary_nodes_checked > 0);
        let ex = check_region_exclusion(&u, &e, 1e-12).unwrap();
        assert_eq!(ex.violations, 0);
    }

    #[test]
    fn hitting_trivial_thetas() {
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let xg = SpaceGrid::arithmetic(0.0, 1.0, 5).unwrap();
        let paths = vec![
            StatePath {
                start_index: 0,
                states: vec![0.5; 11],
            };
            3
        ];
        let at_t = GridFunction::constant(xg, 1.0);
        let rep = hitting_path_check(&at_t, &tg, &paths).unwrap();
        assert_eq!(rep.crossing_index, vec![Some(10); 3]);
        let now = GridFunction::constant(xg, 0.0);
        let rep = hitting_path_check(&now, &tg, &paths).unwrap();
        assert_eq!(rep.crossing_index, vec![Some(0); 3]);
        let late = vec![StatePath {
            start_index: 5,
            states: vec![0.5; 6],
        }];
        assert!(matches!(hitting_path_check(&now, &tg, &late), Err(Error::Precondition(_))));
    }

    #[test]
    fn report_csv_layout() {
        let rows = vec![row("order", "max", 1.5, Some((2, 3))), row("order", "n", 0.0, None)];
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,metric,value,node_t,node_x\norder,max,1.5"));
        assert!(text.ends_with(",,\n"));
    }
}
