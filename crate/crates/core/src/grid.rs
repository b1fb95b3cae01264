//! Uniform time and space grids.
//!
//! Space grids carry a coordinate (the variable the stencils act on) and a
//! state (the model variable). They coincide except on log-price grids,
//! where the coordinate is `y = ln x`.

use crate::error::{Error, Result};

/// Relative spacing deviation tolerated when reading grids back from files.
const UNIFORMITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Rebuilds a grid from explicit nodes, rejecting non-uniform spacing.
    pub fn from_nodes(nodes: &[f64]) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("time grid needs at least two nodes".into()));
        }
        if nodes[0].abs() > UNIFORMITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "time grid must start at 0, got {}",
                nodes[0]
            )));
        }
        let grid = Self::new(nodes[nodes.len() - 1], nodes.len() - 1)?;
        check_uniform(nodes, |i| grid.node(i), grid.dt())?;
        Ok(grid)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    /// Index of the first node not earlier than `t` (up to rounding).
    pub fn ceil_index(&self, t: f64) -> usize {
        let s = t / self.dt();
        let nearest = s.round();
        let idx = if (s - nearest).abs() < 1e-9 { nearest } else { s.ceil() };
        (idx.max(0.0) as usize).min(self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Coordinate is `ln x`, state `x > 0`.
    LogPrice,
    /// Coordinate and state coincide on the real line.
    Arithmetic,
    /// States `1..=d`.
    FiniteState,
}

impl GridKind {
    pub fn name(self) -> &'static str {
        match self {
            GridKind::LogPrice => "log-price",
            GridKind::Arithmetic => "arithmetic",
            GridKind::FiniteState => "finite-state",
        }
    }

    pub fn is_continuum(self) -> bool {
        !matches!(self, GridKind::FiniteState)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    kind: GridKind,
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl SpaceGrid {
    pub fn new(kind: GridKind, lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        match kind {
            GridKind::FiniteState => {
                if n_points == 0 {
                    return Err(Error::InvalidParameter("finite state space is empty".into()));
                }
                Ok(Self {
                    kind,
                    lo: 1.0,
                    hi: n_points as f64,
                    n_points,
                })
            }
            _ => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidParameter(format!(
                        "space grid needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
                if n_points < 3 {
                    return Err(Error::InvalidParameter(format!(
                        "space grid needs at least 3 points, got {n_points}"
                    )));
                }
                Ok(Self { kind, lo, hi, n_points })
            }
        }
    }

    /// Log-price grid given in coordinates `y = ln x`.
    pub fn log_price(y_lo: f64, y_hi: f64, n_points: usize) -> Result<Self> {
        Self::new(GridKind::LogPrice, y_lo, y_hi, n_points)
    }

    /// Log-price grid spanning six standard deviations around `center`.
    pub fn log_price_around(center: f64, sigma: f64, horizon: f64, n_points: usize) -> Result<Self> {
        if !(center > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "log-price grid centre must be positive, got {center}"
            )));
        }
        let half = 6.0 * sigma * horizon.sqrt();
        Self::log_price(center.ln() - half, center.ln() + half, n_points)
    }

    pub fn arithmetic(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        Self::new(GridKind::Arithmetic, lo, hi, n_points)
    }

    pub fn finite_state(d: usize) -> Result<Self> {
        Self::new(GridKind::FiniteState, 1.0, d as f64, d)
    }

    /// Rebuilds a grid from explicit coordinates, rejecting non-uniform spacing.
    pub fn from_coords(kind: GridKind, coords: &[f64]) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty space grid".into()));
        }
        let grid = Self::new(kind, coords[0], coords[n - 1], n)?;
        if kind.is_continuum() {
            check_uniform(coords, |k| grid.coord(k), grid.step())?;
        }
        Ok(grid)
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    /// Coordinate spacing; 1 for finite-state grids.
    pub fn step(&self) -> f64 {
        if self.n_points < 2 {
            return 1.0;
        }
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 >= self.n_points {
            self.hi
        } else {
            self.lo + self.step() * k as f64
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.coord(k)).collect()
    }

    pub fn state(&self, k: usize) -> f64 {
        match self.kind {
            GridKind::LogPrice => self.coord(k).exp(),
            _ => self.coord(k),
        }
    }

    pub fn states(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.state(k)).collect()
    }

    /// Coordinate of a model state.
    pub fn coord_of(&self, state: f64) -> f64 {
        match self.kind {
            GridKind::LogPrice => state.ln(),
            _ => state,
        }
    }

    /// Index of the node nearest to `state`.
    pub fn nearest_index(&self, state: f64) -> usize {
        let s = (self.coord_of(state) - self.lo) / self.step();
        (s.round().max(0.0) as usize).min(self.n_points - 1)
    }

    /// Linear interpolation of nodal `values` at `state`, held flat outside the grid.
    pub fn interpolate(&self, values: &[f64], state: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let n = self.n_points;
        if n == 1 {
            return values[0];
        }
        let c = self.coord_of(state);
        if !(c > self.lo) {
            return values[0];
        }
        if c >= self.hi {
            return values[n - 1];
        }
        let s = (c - self.lo) / self.step();
        let k = (s.floor() as usize).min(n - 2);
        let w = s - k as f64;
        if w == 0.0 {
            return values[k];
        }
        (1.0 - w) * values[k] + w * values[k + 1]
    }

    pub fn same_as(&self, other: &SpaceGrid) -> bool {
        self.kind == other.kind
            && self.n_points == other.n_points
            && (self.lo - other.lo).abs() <= UNIFORMITY_TOL * (1.0 + self.lo.abs())
            && (self.hi - other.hi).abs() <= UNIFORMITY_TOL * (1.0 + self.hi.abs())
    }
}

fn check_uniform(values: &[f64], expected: impl Fn(usize) -> f64, step: f64) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        let e = expected(i);
        if (v - e).abs() > UNIFORMITY_TOL * (step.abs() + e.abs()) {
            return Err(Error::InvalidParameter(format!(
                "non-uniform grid: node {i} is {v}, expected {e}"
            )));
        }
    }
    Ok(())
}

/// Nodal values over a space grid with linear interpolation between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: SpaceGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: SpaceGrid, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn eval(&self, state: f64) -> f64 {
        self.grid.interpolate(&self.values, state)
    }
}
