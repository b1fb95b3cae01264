//! Terminal payoffs and the `put:K` / `call:K` / `digital:K` / `custom:file.csv` grammar.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::csv::parse_f64;
use crate::error::{Error, Result};

#[derive(Clone)]
enum Kind {
    Put(f64),
    Call(f64),
    Digital(f64),
    Constant(f64),
    Identity,
    Table { xs: Vec<f64>, ys: Vec<f64> },
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A terminal payoff `g` together with a display label.
#[derive(Clone)]
pub struct Payoff {
    kind: Kind,
    label: String,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff").field("label", &self.label).finish()
    }
}

impl Payoff {
    pub fn put(strike: f64) -> Self {
        Self {
            kind: Kind::Put(strike),
            label: format!("put:{strike}"),
        }
    }

    pub fn call(strike: f64) -> Self {
        Self {
            kind: Kind::Call(strike),
            label: format!("call:{strike}"),
        }
    }

    /// `1{x >= K}`.
    pub fn digital(strike: f64) -> Self {
        Self {
            kind: Kind::Digital(strike),
            label: format!("digital:{strike}"),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            kind: Kind::Constant(c),
            label: format!("const:{c}"),
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: Kind::Identity,
            label: "identity".into(),
        }
    }

    /// Piecewise-linear interpolation through `(xs, ys)`, flat outside.
    pub fn table(xs: Vec<f64>, ys: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::InvalidParameter("payoff table needs matching non-empty columns".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("payoff table abscissae must increase".into()));
        }
        if ys.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("payoff table has non-finite entries".into()));
        }
        Ok(Self {
            kind: Kind::Table { xs, ys },
            label: label.into(),
        })
    }

    pub fn from_fn(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: Kind::Func(Arc::new(f)),
            label: label.into(),
        }
    }

    /// Parses a payoff spec; `custom:` paths resolve against `base_dir`.
    pub fn parse(spec: &str, base_dir: Option<&Path>) -> Result<Self> {
        let (name, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("payoff spec {spec:?} is not of the form name:arg")))?;
        let number = || -> Result<f64> {
            let k = parse_f64(arg)?;
            if !k.is_finite() {
                return Err(Error::Parse(format!("non-finite payoff parameter in {spec:?}")));
            }
            Ok(k)
        };
        match name.trim() {
            "put" => Ok(Self::put(number()?)),
            "call" => Ok(Self::call(number()?)),
            "digital" => Ok(Self::digital(number()?)),
            "const" => Ok(Self::constant(number()?)),
            "identity" => Ok(Self::identity()),
            "custom" => {
                let path = match base_dir {
                    Some(dir) => dir.join(arg.trim()),
                    None => Path::new(arg.trim()).to_path_buf(),
                };
                let text = std::fs::read_to_string(&path)?;
                Self::parse_table(&text, spec)
            }
            other => Err(Error::Parse(format!(
                "unknown payoff {other:?}; expected put, call, digital, const, identity or custom"
            ))),
        }
    }

    /// Two-column `x,g` CSV; a non-numeric first line is treated as a header.
    pub fn parse_table(text: &str, label: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cells = line.split(',');
            let (a, b) = match (cells.next(), cells.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Parse(format!("payoff table line {} needs two columns", n + 1))),
            };
            match (parse_f64(a), parse_f64(b)) {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if xs.is_empty() && n == 0 => continue,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        Self::table(xs, ys, label)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Put(k) => (k - x).max(0.0),
            Kind::Call(k) => (x - k).max(0.0),
            Kind::Digital(k) => {
                if x >= *k {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Constant(c) => *c,
            Kind::Identity => x,
            Kind::Table { xs, ys } => {
                let n = xs.len();
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= xs[n - 1] {
                    return ys[n - 1];
                }
                let j = xs.partition_point(|v| *v <= x);
                let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
                (1.0 - w) * ys[j - 1] + w * ys[j]
            }
            Kind::Func(f) => f(x),
        }
    }

    /// States where the payoff is not smooth: strikes and table knots.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Put(k) | Kind::Call(k) | Kind::Digital(k) => vec![*k],
            Kind::Table { xs, .. } => xs.clone(),
            _ => Vec::new(),
        }
    }

    /// Strike of put/call/digital payoffs.
    pub fn strike(&self) -> Option<f64> {
        match self.kind {
            Kind::Put(k) | Kind::Call(k) | Kind::Digital(k) => Some(k),
            _ => None,
        }
    }
}
