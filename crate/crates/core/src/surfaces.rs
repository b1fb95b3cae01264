//! Value surfaces on time × space grids and the objects extracted from them:
//! the embedded payoff with its extremizer map, the continuation/stopping
//! mask, and the pasted stopping value.

use std::io::{BufRead, Write};

use crate::csv::{fmt_f64, parse_f64};
use crate::error::{Error, Result};
use crate::grid::{GridKind, SpaceGrid, TimeGrid};

/// Whether the embedding takes the time-infimum (American, stopper
/// maximizes) or the time-supremum (game, stopper minimizes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Min => "min",
            Direction::Max => "max",
        }
    }

    /// True when `a` is at least as extreme as `b` in this direction.
    fn better_or_equal(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Min => a <= b,
            Direction::Max => a >= b,
        }
    }
}

/// `v(t_i, x_k)` stored row-major by time node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    tgrid: TimeGrid,
    xgrid: SpaceGrid,
    values: Vec<f64>,
    rate: f64,
}

impl ValueSurface {
    pub fn new(tgrid: TimeGrid, xgrid: SpaceGrid, values: Vec<f64>, rate: f64) -> Result<Self> {
        let nx = xgrid.len();
        if values.len() != tgrid.n_nodes() * nx {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                tgrid.n_nodes(),
                nx
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time_index: pos / nx,
                space_index: pos % nx,
                value: values[pos],
            });
        }
        Ok(Self {
            tgrid,
            xgrid,
            values,
            rate,
        })
    }

    /// Samples `f(t, state)` on every node.
    pub fn from_fn(tgrid: TimeGrid, xgrid: SpaceGrid, rate: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(tgrid.n_nodes() * xgrid.len());
        for i in 0..tgrid.n_nodes() {
            let t = tgrid.node(i);
            for k in 0..xgrid.len() {
                values.push(f(t, xgrid.state(k)));
            }
        }
        Self::new(tgrid, xgrid, values, rate)
    }

    /// Builds a surface from rows without the finiteness check; callers
    /// guarantee finite data.
    pub(crate) fn from_rows_unchecked(tgrid: TimeGrid, xgrid: SpaceGrid, rows: Vec<Vec<f64>>, rate: f64) -> Self {
        let values = rows.into_iter().flatten().collect();
        Self {
            tgrid,
            xgrid,
            values,
            rate,
        }
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn xgrid(&self) -> &SpaceGrid {
        &self.xgrid
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn n_times(&self) -> usize {
        self.tgrid.n_nodes()
    }

    pub fn n_space(&self) -> usize {
        self.xgrid.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_space() + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nx = self.n_space();
        &self.values[i * nx..(i + 1) * nx]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_times()).map(|i| self.get(i, k)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise map keeping the grids.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.tgrid, self.xgrid, self.values.iter().map(|&v| f(v)).collect(), self.rate)
    }

    /// Value at `(t_i, state)` by linear interpolation in space.
    pub fn interpolate(&self, i: usize, state: f64) -> f64 {
        self.xgrid.interpolate(self.row(i), state)
    }

    pub fn ensure_same_grid(&self, other: &ValueSurface) -> Result<()> {
        if self.tgrid != other.tgrid || !self.xgrid.same_as(&other.xgrid) {
            return Err(Error::GridMismatch(format!(
                "surfaces on {}x{} and {}x{} grids",
                self.n_times(),
                self.n_space(),
                other.n_times(),
                other.n_space()
            )));
        }
        Ok(())
    }

    /// Writes the surface with header `t\x,<coords>` and one row per time node.
    /// Space columns hold grid coordinates (log-price for log grids).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t\\x")?;
        for k in 0..self.n_space() {
            write!(out, ",{}", fmt_f64(self.xgrid.coord(k)))?;
        }
        writeln!(out)?;
        for i in 0..self.n_times() {
            write!(out, "{}", fmt_f64(self.tgrid.node(i)))?;
            for v in self.row(i) {
                write!(out, ",{}", fmt_f64(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, kind: GridKind, rate: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty surface file".into()))??;
        let mut cells = header.split(',');
        if cells.next().map(str::trim) != Some("t\\x") {
            return Err(Error::Parse("surface header must start with t\\x".into()));
        }
        let coords = cells.map(parse_f64).collect::<Result<Vec<_>>>()?;
        let xgrid = SpaceGrid::from_coords(kind, &coords)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            times.push(parse_f64(cells.next().unwrap_or(""))?);
            let row = cells.map(parse_f64).collect::<Result<Vec<_>>>()?;
            if row.len() != coords.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} values, expected {}",
                    lineno + 2,
                    row.len(),
                    coords.len()
                )));
            }
            values.extend(row);
        }
        let tgrid = TimeGrid::from_nodes(&times)?;
        Self::new(tgrid, xgrid, values, rate)
    }
}

/// Closed run of time nodes `start..=end` on which the column attains its extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInterval {
    pub start: usize,
    pub end: usize,
}

/// Embedded payoff `f = inf_t v` (or `h = sup_t v`) with the extremizer data.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPayoff {
    direction: Direction,
    tgrid: TimeGrid,
    xgrid: SpaceGrid,
    payoff: Vec<f64>,
    theta: Vec<f64>,
    extremizer_sets: Vec<Vec<NodeInterval>>,
}

impl EmbeddedPayoff {
    /// Payoff with a prescribed stopping boundary `theta`; each extremizer set
    /// is taken to be the single node nearest to `theta[k]`.
    pub fn with_theta(
        direction: Direction,
        tgrid: TimeGrid,
        xgrid: SpaceGrid,
        payoff: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if payoff.len() != xgrid.len() || theta.len() != xgrid.len() {
            return Err(Error::GridMismatch("payoff/theta length differs from the space grid".into()));
        }
        let horizon = tgrid.horizon();
        if let Some(bad) = theta.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
            return Err(Error::InvalidParameter(format!("theta value {bad} outside [0, {horizon}]")));
        }
        let extremizer_sets = theta
            .iter()
            .map(|&t| {
                let j = tgrid.ceil_index(t);
                vec![NodeInterval { start: j, end: j }]
            })
            .collect();
        Ok(Self {
            direction,
            tgrid,
            xgrid,
            payoff,
            theta,
            extremizer_sets,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn xgrid(&self) -> &SpaceGrid {
        &self.xgrid
    }

    pub fn payoff(&self) -> &[f64] {
        &self.payoff
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn extremizer_sets(&self) -> &[Vec<NodeInterval>] {
        &self.extremizer_sets
    }

    /// Extremizer intervals of state `k` as time pairs.
    pub fn extremizer_times(&self, k: usize) -> Vec<(f64, f64)> {
        self.extremizer_sets[k]
            .iter()
            .map(|iv| (self.tgrid.node(iv.start), self.tgrid.node(iv.end)))
            .collect()
    }

    /// True when time node `i` lies in an extremizer interval of state `k`.
    pub fn is_extremizer(&self, i: usize, k: usize) -> bool {
        self.extremizer_sets[k].iter().any(|iv| iv.start <= i && i <= iv.end)
    }

    /// Payoff as an interpolating function over the space grid.
    pub fn payoff_fn(&self) -> crate::grid::GridFunction {
        crate::grid::GridFunction {
            grid: self.xgrid,
            values: self.payoff.clone(),
        }
    }

    /// The payoff as an interpolated terminal payoff for the lattice oracles.
    pub fn as_payoff(&self) -> crate::payoff::Payoff {
        let f = self.payoff_fn();
        let label = format!("embedded-{}", self.direction.name());
        crate::payoff::Payoff::from_fn(label, move |x| f.eval(x))
    }

    pub fn theta_fn(&self) -> crate::grid::GridFunction {
        crate::grid::GridFunction {
            grid: self.xgrid,
            values: self.theta.clone(),
        }
    }

    /// Columns `x,payoff,theta,extremizer_intervals`, intervals as `a:b` joined by `;`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,payoff,theta,extremizer_intervals")?;
        for k in 0..self.xgrid.len() {
            let intervals: Vec<String> = self
                .extremizer_times(k)
                .iter()
                .map(|(a, b)| format!("{}:{}", fmt_f64(*a), fmt_f64(*b)))
                .collect();
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.xgrid.coord(k)),
                fmt_f64(self.payoff[k]),
                fmt_f64(self.theta[k]),
                intervals.join(";")
            )?;
        }
        Ok(())
    }
}

/// Default plateau tolerance `1e-9 (1 + ||v||_inf)`.
pub fn default_plateau_tol(surface: &ValueSurface) -> f64 {
    1e-9 * (1.0 + surface.max_abs())
}

/// Extracts the time-extremum of every column together with the extremizer
/// plateaus and the earliest extremizer `theta`.
pub fn extract_embedding(surface: &ValueSurface, direction: Direction, plateau_tol: f64) -> Result<EmbeddedPayoff> {
    if let Some(pos) = surface.values.iter().position(|v| !v.is_finite()) {
        let nx = surface.n_space();
        return Err(Error::NonFinite {
            time_index: pos / nx,
            space_index: pos % nx,
            value: surface.values[pos],
        });
    }
    if !(plateau_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("plateau tolerance {plateau_tol} must be >= 0")));
    }
    let nt = surface.n_times();
    let nx = surface.n_space();
    let mut payoff = Vec::with_capacity(nx);
    let mut theta = Vec::with_capacity(nx);
    let mut sets = Vec::with_capacity(nx);
    for k in 0..nx {
        let mut best = surface.get(0, k);
        for i in 1..nt {
            let v = surface.get(i, k);
            if !direction.better_or_equal(best, v) {
                best = v;
            }
        }
        let mut intervals = Vec::new();
        let mut run_start: Option<usize> = None;
        for i in 0..nt {
            let on = (surface.get(i, k) - best).abs() <= plateau_tol;
            match (on, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    intervals.push(NodeInterval { start: s, end: i - 1 });
                    run_start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = run_start {
            intervals.push(NodeInterval { start: s, end: nt - 1 });
        }
        // inf argmin ∧ T; the run list is never empty since `best` is attained
        let first = intervals[0].start;
        theta.push(surface.tgrid.node(first).min(surface.tgrid.horizon()));
        payoff.push(best);
        sets.push(intervals);
    }
    Ok(EmbeddedPayoff {
        direction,
        tgrid: surface.tgrid,
        xgrid: surface.xgrid,
        payoff,
        theta,
        extremizer_sets: sets,
    })
}

/// Continuation mask `t_i < theta(x_k)` and the nodes adjacent to a flip.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    n_times: usize,
    n_space: usize,
    mask: Vec<bool>,
    boundary_nodes: Vec<(usize, usize)>,
}

impl RegionMask {
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    /// True on continuation nodes.
    pub fn is_continuation(&self, i: usize, k: usize) -> bool {
        self.mask[i * self.n_space + k]
    }

    pub fn boundary_nodes(&self) -> &[(usize, usize)] {
        &self.boundary_nodes
    }

    pub fn continuation_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// First time index in the stopping region for state `k` (`n_times` if none).
    pub fn stopping_start(&self, k: usize) -> usize {
        (0..self.n_times)
            .find(|&i| !self.is_continuation(i, k))
            .unwrap_or(self.n_times)
    }
}

pub fn build_regions(embedded: &EmbeddedPayoff, tgrid: &TimeGrid) -> Result<RegionMask> {
    let nt = tgrid.n_nodes();
    let nx = embedded.xgrid.len();
    let mut mask = Vec::with_capacity(nt * nx);
    for i in 0..nt {
        let t = tgrid.node(i);
        mask.extend(embedded.theta.iter().map(|&th| t < th));
    }
    let at = |i: usize, k: usize| mask[i * nx + k];
    let spatial = embedded.xgrid.kind().is_continuum();
    let mut boundary_nodes = Vec::new();
    for i in 0..nt {
        for k in 0..nx {
            let m = at(i, k);
            let flips = (i > 0 && at(i - 1, k) != m)
                || (i + 1 < nt && at(i + 1, k) != m)
                || (spatial && k > 0 && at(i, k - 1) != m)
                || (spatial && k + 1 < nx && at(i, k + 1) != m);
            if flips {
                boundary_nodes.push((i, k));
            }
        }
    }
    Ok(RegionMask {
        n_times: nt,
        n_space: nx,
        mask,
        boundary_nodes,
    })
}

/// `v` on continuation nodes, the embedded payoff on stopping nodes.
pub fn paste_value(surface: &ValueSurface, embedded: &EmbeddedPayoff, regions: &RegionMask) -> Result<ValueSurface> {
    let nt = surface.n_times();
    let nx = surface.n_space();
    if regions.n_times != nt || regions.n_space != nx || embedded.payoff.len() != nx {
        return Err(Error::GridMismatch(format!(
            "surface {}x{}, regions {}x{}, payoff {}",
            nt,
            nx,
            regions.n_times,
            regions.n_space,
            embedded.payoff.len()
        )));
    }
    let mut values = Vec::with_capacity(nt * nx);
    for i in 0..nt {
        for k in 0..nx {
            values.push(if regions.is_continuation(i, k) {
                surface.get(i, k)
            } else {
                embedded.payoff[k]
            });
        }
    }
    ValueSurface::new(surface.tgrid, surface.xgrid, values, surface.rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemicontinuityReport {
    /// Largest upward jump of `x -> max t_*(x)` into a neighbour, beyond the modulus.
    pub max_usc_violation: f64,
    /// Largest downward jump of `x -> min t_*(x)` into a neighbour, beyond the modulus.
    pub min_lsc_violation: f64,
}

/// Discrete semicontinuity surrogate for the extremizer map under a Lipschitz modulus.
pub fn check_semicontinuity(embedded: &EmbeddedPayoff, lipschitz: f64) -> Result<SemicontinuityReport> {
    if !embedded.xgrid.kind().is_continuum() {
        return Err(Error::NotApplicable("semicontinuity needs a continuum space grid".into()));
    }
    let allowance = lipschitz * embedded.xgrid.step();
    let tg = &embedded.tgrid;
    let upper: Vec<f64> = embedded
        .extremizer_sets
        .iter()
        .map(|s| tg.node(s.last().map_or(0, |iv| iv.end)))
        .collect();
    let lower: Vec<f64> = embedded
        .extremizer_sets
        .iter()
        .map(|s| tg.node(s.first().map_or(0, |iv| iv.start)))
        .collect();
    let nx = upper.len();
    let mut usc = 0.0f64;
    let mut lsc = 0.0f64;
    for k in 0..nx {
        for j in [k.wrapping_sub(1), k + 1] {
            if j >= nx {
                continue;
            }
            usc = usc.max(upper[j] - upper[k] - allowance);
            lsc = lsc.max(lower[k] - lower[j] - allowance);
        }
    }
    Ok(SemicontinuityReport {
        max_usc_violation: usc,
        min_lsc_violation: lsc,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvexityReport {
    pub nonconvex_states: Vec<usize>,
}

/// Flags states whose extremizer set splits into more than one plateau.
pub fn check_extremizer_convexity(embedded: &EmbeddedPayoff) -> ConvexityReport {
    ConvexityReport {
        nonconvex_states: embedded
            .extremizer_sets
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() > 1)
            .map(|(k, _)| k)
            .collect(),
    }
}
