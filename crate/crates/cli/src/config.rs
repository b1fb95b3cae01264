//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Bs,
    Uvol,
    Chain,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Bs => "bs",
            Model::Uvol => "uvol",
            Model::Chain => "chain",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    pub pipeline: Vec<String>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// `name:arg` payoff spec; unused by the chain model.
    pub payoff: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
    pub bs: Option<BsConfig>,
    pub uvol: Option<UvolConfig>,
    pub chain: Option<ChainConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Directory of the config file, for relative payoff tables.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub time_steps: usize,
    pub space_points: usize,
    /// Grid edges in state units.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Centre of the default space grid; the payoff strike if absent.
    pub center: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            time_steps: 200,
            space_points: 401,
            lo: None,
            hi: None,
            center: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsConfig {
    pub rate: f64,
    pub sigma: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UvolConfig {
    #[serde(default)]
    pub rate: f64,
    pub maturity: f64,
    /// Drift interval `[b_lo, b_hi]`.
    pub b: [f64; 2],
    /// Variance interval `[c_lo, c_hi]`.
    pub c: [f64; 2],
    /// `none` or `normal:intensity,mean,std`.
    #[serde(default = "no_jumps")]
    pub jumps: String,
}

fn no_jumps() -> String {
    "none".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub maturity: f64,
    /// One or more generator matrices, row by row.
    pub generators: Vec<Vec<Vec<f64>>>,
    pub terminal: Vec<f64>,
    /// `max` embeds `h = sup_t v`, `min` embeds `f = inf_t v`.
    #[serde(default = "default_chain_direction")]
    pub direction: String,
    #[serde(default = "default_nisio_depth")]
    pub nisio_depth: u32,
}

fn default_chain_direction() -> String {
    "max".into()
}

fn default_nisio_depth() -> u32 {
    12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub tree_steps: usize,
    /// Spot states for tree and Monte Carlo comparisons at `t = 0`.
    pub spots: Option<Vec<f64>>,
    /// Starting states for the hitting-time Monte Carlo.
    pub mc_spots: Option<Vec<f64>>,
    pub mc_paths: usize,
    pub game_tree_scan: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tree_steps: 2000,
            spots: None,
            mc_spots: None,
            mc_paths: 10_000,
            game_tree_scan: 3,
        }
    }
}

/// Check tolerances; absent entries take stage defaults. All must be positive.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub order: Option<f64>,
    pub fbp_equality: Option<f64>,
    pub fbp_inequality: Option<f64>,
    pub variational: Option<f64>,
    pub fit_continuous: Option<f64>,
    pub binomial: Option<f64>,
    pub psor: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub const_stop: Option<f64>,
    pub game_tree: Option<f64>,
    pub nisio: Option<f64>,
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, Option<f64>); 11] {
        [
            ("order", self.order),
            ("fbp_equality", self.fbp_equality),
            ("fbp_inequality", self.fbp_inequality),
            ("variational", self.variational),
            ("fit_continuous", self.fit_continuous),
            ("binomial", self.binomial),
            ("psor", self.psor),
            ("mc_stderr", self.mc_stderr),
            ("const_stop", self.const_stop),
            ("game_tree", self.game_tree),
            ("nisio", self.nisio),
        ]
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Structural checks done before any stage runs.
    pub fn validate(&self) -> anyhow::Result<()> {
        for (name, tol) in self.tolerances.entries() {
            if let Some(t) = tol {
                if !(t > 0.0 && t.is_finite()) {
                    bail!("tolerance {name} must be positive, got {t}");
                }
            }
        }
        if self.grid.time_steps == 0 {
            bail!("grid.time_steps must be positive");
        }
        if self.pipeline.is_empty() {
            bail!("pipeline is empty");
        }
        match self.model {
            Model::Bs => {
                if self.bs.is_none() {
                    bail!("model bs needs a [bs] section");
                }
                if self.payoff.is_none() {
                    bail!("model bs needs a payoff");
                }
            }
            Model::Uvol => {
                if self.uvol.is_none() {
                    bail!("model uvol needs a [uvol] section");
                }
                if self.payoff.is_none() {
                    bail!("model uvol needs a payoff");
                }
            }
            Model::Chain => {
                let Some(c) = &self.chain else {
                    bail!("model chain needs a [chain] section");
                };
                if !matches!(c.direction.as_str(), "min" | "max") {
                    bail!("chain.direction must be min or max, got {:?}", c.direction);
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.grid.lo, self.grid.hi) {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                bail!("grid.lo must be below grid.hi");
            }
        } else if self.grid.lo.is_some() != self.grid.hi.is_some() {
            bail!("grid.lo and grid.hi must be given together");
        }
        Ok(())
    }
}
