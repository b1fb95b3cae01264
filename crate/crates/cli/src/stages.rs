//! Stage catalog and the pipeline runner.

use std::io::Write;

use anyhow::{anyhow, bail, Context};
use embedlab_core::bs::{self, BSParams};
use embedlab_core::chain::{
    chain_embed, chain_stop_value, hjb_ode_solve, nisio_iterate, ChainValue, GeneratorMatrix, GeneratorSet,
};
use embedlab_core::csv::fmt_f64;
use embedlab_core::embedding::{
    check_order, epsilon_sandwich_points, fbp_residual, fit_check, hitting_path_check, variational_residual,
    write_report_csv, BlackScholesOperator, DiscreteOperator, ReportRow,
};
use embedlab_core::grid::{SpaceGrid, TimeGrid};
use embedlab_core::oracle::{
    american_binomial, game_tree, mc_stop_at_theta, psor_solve, simulate_gbm_paths, ArithmeticParams,
    ObstacleProblem, PSORConfig, StopMode, TreeSpec,
};
use embedlab_core::payoff::Payoff;
use embedlab_core::surfaces::{
    build_regions, default_plateau_tol, extract_embedding, paste_value, Direction, EmbeddedPayoff, RegionMask,
    ValueSurface,
};
use embedlab_core::uvol::{check_const_stop, hjb_solve, BachelierSupOperator, HjbConfig, JumpSpec, UncertaintySet};

use crate::config::{ExperimentConfig, Model};
use crate::output::{OutputDir, Status, SummaryRow};

pub struct StageInfo {
    pub name: &'static str,
    pub needs: Option<&'static str>,
    pub artifact: &'static str,
    pub description: &'static str,
}

const fn stage(
    name: &'static str,
    needs: Option<&'static str>,
    artifact: &'static str,
    description: &'static str,
) -> StageInfo {
    StageInfo {
        name,
        needs,
        artifact,
        description,
    }
}

const BS_STAGES: &[StageInfo] = &[
    stage("solve", None, "v.csv", "Crank–Nicolson value surface v of the European claim"),
    stage("embed", Some("solve"), "embedding.csv", "embedded payoff f = min_t v and stopping time theta"),
    stage("paste", Some("embed"), "u.csv", "pasted surface u: v before theta, f after"),
    stage("order", Some("paste"), "order.csv", "u <= v at every node"),
    stage("fbp-residual", Some("paste"), "fbp.csv", "free-boundary equality on C and inequality everywhere"),
    stage("variational", Some("paste"), "variational.csv", "variational inequality residual with obstacle f"),
    stage("fit-check", Some("paste"), "fit.csv", "continuous and smooth fit at the stopping boundary"),
    stage("binomial-compare", Some("embed"), "binomial.csv", "American CRR tree on f against v(0, x)"),
    stage("psor-compare", Some("embed"), "psor.csv", "PSOR obstacle solve on f against v for t <= theta"),
    stage("mc-hitting", Some("embed"), "mc.csv", "seeded GBM paths stopped at the theta graph"),
];

const UVOL_STAGES: &[StageInfo] = &[
    stage("solve", None, "v.csv", "implicit HJB value v with pointwise sup over the uncertainty set"),
    stage("embed", Some("solve"), "embedding.csv", "embedded payoff h = max_t v and theta*"),
    stage("paste", Some("embed"), "w.csv", "game value w: v before theta*, h after"),
    stage("order", Some("paste"), "order.csv", "v <= w at every node"),
    stage("fbp-residual", Some("paste"), "fbp.csv", "free-boundary residuals of w for the sup-operator"),
    stage("const-stop", Some("paste"), "const_stop.csv", "w stays at h once it reaches it"),
    stage("game-tree-compare", Some("embed"), "game_tree.csv", "trinomial stopping game on h against v(0, x)"),
];

const CHAIN_STAGES: &[StageInfo] = &[
    stage("solve", None, "v.csv", "RK4 solution of the controlled chain ODE"),
    stage("embed", Some("solve"), "embedding.csv", "embedded payoff (min or max over time) and theta"),
    stage("paste", Some("embed"), "u.csv", "pasted surface on the finite state space"),
    stage("stop-value", Some("embed"), "stop.csv", "controller/stopper game on the embedded payoff"),
    stage("order", Some("stop-value"), "order.csv", "v against the stopping value, in the embedding's order"),
    stage("nisio-compare", Some("solve"), "nisio.csv", "Nisio semigroup iteration against the ODE at t = 0"),
];

pub fn catalog(model: Model) -> &'static [StageInfo] {
    match model {
        Model::Bs => BS_STAGES,
        Model::Uvol => UVOL_STAGES,
        Model::Chain => CHAIN_STAGES,
    }
}

pub fn normalize(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace('_', "-")
}

/// Resolves stage names and checks that each stage's input is produced earlier.
pub fn plan(cfg: &ExperimentConfig) -> anyhow::Result<Vec<&'static StageInfo>> {
    let cat = catalog(cfg.model);
    let mut out: Vec<&'static StageInfo> = Vec::new();
    for raw in &cfg.pipeline {
        let name = normalize(raw);
        let Some(info) = cat.iter().find(|s| s.name == name) else {
            let valid: Vec<&str> = cat.iter().map(|s| s.name).collect();
            bail!(
                "unknown stage {raw:?} for model {}; valid stages: {}",
                cfg.model.name(),
                valid.join(", ")
            );
        };
        if let Some(need) = info.needs {
            if !out.iter().any(|s| s.name == need) {
                bail!("stage {} needs {need} earlier in the pipeline", info.name);
            }
        }
        out.push(info);
    }
    Ok(out)
}

pub struct RunOptions {
    pub seed: u64,
    pub tol_scale: f64,
}

enum Engine {
    Bs { p: BSParams },
    Uvol { set: UncertaintySet, rate: f64 },
    Chain { set: GeneratorSet, terminal: Vec<f64>, direction: Direction },
}

struct State<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    engine: Engine,
    payoff: Option<Payoff>,
    tgrid: TimeGrid,
    v: Option<ValueSurface>,
    chain_v: Option<ChainValue>,
    embedded: Option<EmbeddedPayoff>,
    regions: Option<RegionMask>,
    pasted: Option<ValueSurface>,
    stop: Option<ValueSurface>,
}

/// Runs the planned stages in order. Returns the name of the failing stage
/// with the error on an engine failure.
pub fn run(
    cfg: &ExperimentConfig,
    stages: &[&'static StageInfo],
    opts: &RunOptions,
    out: &mut OutputDir,
) -> Result<(), (String, anyhow::Error)> {
    let mut state = State::new(cfg, opts).map_err(|e| ("setup".to_string(), e))?;
    for info in stages {
        log::info!("stage {}", info.name);
        let rows = state
            .run_stage(info, out)
            .with_context(|| format!("stage {}", info.name))
            .map_err(|e| (info.name.to_string(), e))?;
        out.record(rows).map_err(|e| (info.name.to_string(), e))?;
    }
    Ok(())
}

fn info_row(stage: &str, check: &str, value: f64) -> SummaryRow {
    SummaryRow {
        stage: stage.into(),
        check: check.into(),
        value,
        status: Status::Info,
    }
}

fn at_most(stage: &str, check: &str, value: f64, limit: f64) -> SummaryRow {
    SummaryRow {
        stage: stage.into(),
        check: check.into(),
        value,
        status: if value <= limit { Status::Pass } else { Status::Fail },
    }
}

fn at_least(stage: &str, check: &str, value: f64, limit: f64) -> SummaryRow {
    SummaryRow {
        stage: stage.into(),
        check: check.into(),
        value,
        status: if value >= limit { Status::Pass } else { Status::Fail },
    }
}

fn report_rows(rows: &[ReportRow]) -> impl FnOnce(&mut dyn Write) -> anyhow::Result<()> + '_ {
    move |w| Ok(write_report_csv(rows, w)?)
}

fn write_table(w: &mut dyn Write, header: &str, rows: &[Vec<f64>]) -> anyhow::Result<()> {
    writeln!(w, "{header}")?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn parse_jumps(spec: &str) -> anyhow::Result<Option<JumpSpec>> {
    let spec = spec.trim();
    if spec == "none" {
        return Ok(None);
    }
    let Some(args) = spec.strip_prefix("normal:") else {
        bail!("jumps must be none or normal:intensity,mean,std, got {spec:?}");
    };
    let nums: Vec<f64> = args
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing jumps {spec:?}"))?;
    let [lambda, mean, std] = nums[..] else {
        bail!("jumps normal: needs three numbers, got {spec:?}");
    };
    Ok(Some(JumpSpec::normal(lambda, mean, std)?))
}

impl<'a> State<'a> {
    fn new(cfg: &'a ExperimentConfig, opts: &'a RunOptions) -> anyhow::Result<Self> {
        let payoff = match &cfg.payoff {
            Some(spec) if cfg.model != Model::Chain => Some(Payoff::parse(spec, cfg.base_dir.as_deref())?),
            _ => None,
        };
        let (engine, horizon) = match cfg.model {
            Model::Bs => {
                let c = cfg.bs.as_ref().ok_or_else(|| anyhow!("missing [bs]"))?;
                let p = BSParams::new(c.rate, c.sigma, c.maturity)?;
                (Engine::Bs { p }, c.maturity)
            }
            Model::Uvol => {
                let c = cfg.uvol.as_ref().ok_or_else(|| anyhow!("missing [uvol]"))?;
                let set = UncertaintySet::new((c.b[0], c.b[1]), (c.c[0], c.c[1]), parse_jumps(&c.jumps)?)?;
                (Engine::Uvol { set, rate: c.rate }, c.maturity)
            }
            Model::Chain => {
                let c = cfg.chain.as_ref().ok_or_else(|| anyhow!("missing [chain]"))?;
                let members = c
                    .generators
                    .iter()
                    .map(|rows| GeneratorMatrix::from_rows(rows))
                    .collect::<Result<Vec<_>, _>>()?;
                let direction = if c.direction == "min" { Direction::Min } else { Direction::Max };
                (
                    Engine::Chain {
                        set: GeneratorSet::new(members)?,
                        terminal: c.terminal.clone(),
                        direction,
                    },
                    c.maturity,
                )
            }
        };
        Ok(Self {
            cfg,
            opts,
            engine,
            payoff,
            tgrid: TimeGrid::new(horizon, cfg.grid.time_steps)?,
            v: None,
            chain_v: None,
            embedded: None,
            regions: None,
            pasted: None,
            stop: None,
        })
    }

    fn tol(&self, configured: Option<f64>, default: f64) -> f64 {
        configured.unwrap_or(default) * self.opts.tol_scale
    }

    fn center(&self) -> f64 {
        self.cfg
            .grid
            .center
            .or_else(|| self.payoff.as_ref().and_then(Payoff::strike))
            .unwrap_or(1.0)
    }

    fn v(&self) -> anyhow::Result<&ValueSurface> {
        self.v.as_ref().ok_or_else(|| anyhow!("no value surface"))
    }

    fn embedded(&self) -> anyhow::Result<&EmbeddedPayoff> {
        self.embedded.as_ref().ok_or_else(|| anyhow!("no embedded payoff"))
    }

    fn pasted(&self) -> anyhow::Result<&ValueSurface> {
        self.pasted.as_ref().ok_or_else(|| anyhow!("no pasted surface"))
    }

    fn bs_params(&self) -> anyhow::Result<BSParams> {
        match &self.engine {
            Engine::Bs { p } => Ok(*p),
            _ => bail!("not a Black–Scholes run"),
        }
    }

    fn operator(&self) -> anyhow::Result<Box<dyn DiscreteOperator>> {
        match &self.engine {
            Engine::Bs { p } => Ok(Box::new(BlackScholesOperator::new(*p))),
            Engine::Uvol { set, rate } => Ok(Box::new(BachelierSupOperator {
                set: set.clone(),
                rate: *rate,
            })),
            Engine::Chain { .. } => bail!("no residual operator wired for the chain pipeline"),
        }
    }

    /// `10 (Δt + Δx²) ‖v‖_∞`, without the space term on finite state spaces.
    fn order_default(&self) -> anyhow::Result<f64> {
        let v = self.v()?;
        let dx2 = if v.xgrid().kind().is_continuum() { v.xgrid().step().powi(2) } else { 0.0 };
        Ok(10.0 * (v.tgrid().dt() + dx2) * v.max_abs().max(1.0))
    }

    fn spots(&self, configured: &Option<Vec<f64>>, default: impl FnOnce(f64) -> Vec<f64>) -> Vec<f64> {
        configured.clone().unwrap_or_else(|| default(self.center()))
    }

    fn run_stage(&mut self, info: &StageInfo, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let name = info.name;
        let art = info.artifact;
        match name {
            "solve" => self.solve(name, art, out),
            "embed" => {
                let direction = match &self.engine {
                    Engine::Bs { .. } => Direction::Min,
                    Engine::Uvol { .. } => Direction::Max,
                    Engine::Chain { direction, .. } => *direction,
                };
                let emb = match &self.chain_v {
                    Some(cv) => chain_embed(cv, direction)?,
                    None => {
                        let v = self.v()?;
                        extract_embedding(v, direction, default_plateau_tol(v))?
                    }
                };
                let regions = build_regions(&emb, &self.tgrid)?;
                out.write_with(art, |w| Ok(emb.write_csv(w)?))?;
                let rows = vec![
                    info_row(name, "continuation_nodes", regions.continuation_count() as f64),
                    info_row(name, "boundary_nodes", regions.boundary_nodes().len() as f64),
                ];
                self.embedded = Some(emb);
                self.regions = Some(regions);
                Ok(rows)
            }
            "paste" => {
                let regions = self.regions.as_ref().ok_or_else(|| anyhow!("no regions"))?;
                let u = paste_value(self.v()?, self.embedded()?, regions)?;
                out.write_with(art, |w| Ok(u.write_csv(w)?))?;
                let rows = vec![info_row(name, "max_abs", u.max_abs())];
                self.pasted = Some(u);
                Ok(rows)
            }
            "order" => {
                let tol = self.tol(self.cfg.tolerances.order, self.order_default()?);
                let v = self.v()?;
                let rep = match &self.engine {
                    Engine::Bs { .. } => check_order(self.pasted()?, v, None, tol)?,
                    Engine::Uvol { .. } => check_order(v, self.pasted()?, None, tol)?,
                    Engine::Chain { direction, .. } => {
                        let stop = self.stop.as_ref().ok_or_else(|| anyhow!("no stopping value"))?;
                        match direction {
                            Direction::Max => check_order(v, stop, None, tol)?,
                            Direction::Min => check_order(stop, v, None, tol)?,
                        }
                    }
                };
                out.write_with(art, report_rows(&rep.rows()))?;
                Ok(vec![
                    info_row(name, "tolerance", tol),
                    info_row(name, "max_lower_minus_upper", rep.max_u_minus_v),
                    at_most(name, "violations", rep.violations() as f64, 0.0),
                ])
            }
            "fbp-residual" => {
                let op = self.operator()?;
                let emb = self.embedded()?;
                let regions = self.regions.as_ref().ok_or_else(|| anyhow!("no regions"))?;
                let rep = fbp_residual(self.pasted()?, op.as_ref(), regions, emb.direction())?;
                out.write_with(art, report_rows(&rep.rows()))?;
                let eq_tol = self.tol(self.cfg.tolerances.fbp_equality, 2e-3);
                let ineq_tol = self.tol(self.cfg.tolerances.fbp_inequality, 1e-3);
                Ok(vec![
                    at_most(name, "max_eq_residual_on_C", rep.max_eq_residual_on_c, eq_tol),
                    info_row(name, "eq_nodes_checked", rep.eq_nodes_checked as f64),
                    at_least(name, "min_inequality_residual", rep.min_inequality_residual, -ineq_tol),
                ])
            }
            "variational" => {
                let op = self.operator()?;
                let rep = variational_residual(self.pasted()?, self.embedded()?, op.as_ref())?;
                out.write_with(art, report_rows(&rep.rows()))?;
                let tol = self.tol(self.cfg.tolerances.variational, 1e-3);
                Ok(vec![at_most(name, "max_abs", rep.max_abs, tol)])
            }
            "fit-check" => {
                let regions = self.regions.as_ref().ok_or_else(|| anyhow!("no regions"))?;
                match fit_check(self.pasted()?, self.embedded()?, regions) {
                    Ok(rep) => {
                        out.write_with(art, report_rows(&rep.rows()))?;
                        let tol = self.tol(self.cfg.tolerances.fit_continuous, 1e-4);
                        Ok(vec![
                            at_most(name, "max_continuous_fit_gap", rep.max_continuous_fit_gap, tol),
                            info_row(name, "max_smooth_fit_gap", rep.max_smooth_fit_gap),
                        ])
                    }
                    Err(embedlab_core::Error::NotApplicable(why)) => {
                        log::warn!("fit check not applicable: {why}");
                        out.write_with(art, report_rows(&[]))?;
                        Ok(vec![info_row(name, "not_applicable", 1.0)])
                    }
                    Err(e) => Err(e.into()),
                }
            }
            "binomial-compare" => self.binomial_compare(name, art, out),
            "psor-compare" => self.psor_compare(name, art, out),
            "mc-hitting" => self.mc_hitting(name, art, out),
            "const-stop" => {
                let tol = self.tol(self.cfg.tolerances.const_stop, 1e-2);
                let rep = check_const_stop(self.pasted()?, self.embedded()?, tol)?;
                let rows = vec![ReportRow {
                    check: "const_stop".into(),
                    metric: "violations".into(),
                    value: rep.violations as f64,
                    node: rep.first_violation,
                }];
                out.write_with(art, report_rows(&rows))?;
                Ok(vec![at_most(name, "violations", rep.violations as f64, 0.0)])
            }
            "game-tree-compare" => self.game_tree_compare(name, art, out),
            "stop-value" => {
                let Engine::Chain { set, direction, .. } = &self.engine else {
                    bail!("stop-value needs the chain model");
                };
                let stopper = match direction {
                    Direction::Max => Direction::Min,
                    Direction::Min => Direction::Max,
                };
                let w = chain_stop_value(set, self.embedded()?.payoff(), &self.tgrid, stopper)?.to_surface()?;
                out.write_with(art, |wr| Ok(w.write_csv(wr)?))?;
                let v = self.v()?;
                let regions = self.regions.as_ref().ok_or_else(|| anyhow!("no regions"))?;
                let mut gap = 0.0f64;
                for k in 0..v.n_space() {
                    for i in 0..=regions.stopping_start(k).min(v.n_times() - 1) {
                        gap = gap.max((v.get(i, k) - w.get(i, k)).abs());
                    }
                }
                // only v <= w is guaranteed here; jumps can skip the graph of theta
                self.stop = Some(w);
                Ok(vec![info_row(name, "max_abs_stop_minus_v_before_theta", gap)])
            }
            "nisio-compare" => {
                let Engine::Chain { set, terminal, .. } = &self.engine else {
                    bail!("nisio-compare needs the chain model");
                };
                let cv = self.chain_v.as_ref().ok_or_else(|| anyhow!("no chain value"))?;
                let depth = self.cfg.chain.as_ref().map_or(12, |c| c.nisio_depth);
                let n = nisio_iterate(set, terminal, self.tgrid.horizon(), depth)?;
                let ode = cv.at(0);
                let table: Vec<Vec<f64>> = (0..n.len()).map(|k| vec![(k + 1) as f64, n[k], ode[k]]).collect();
                out.write_with(art, |w| write_table(w, "state,nisio,ode", &table))?;
                let gap = (n - ode).amax();
                let tol = self.tol(self.cfg.tolerances.nisio, 1e-4);
                Ok(vec![at_most(name, "max_abs_gap", gap, tol)])
            }
            other => bail!("stage {other} is not implemented"),
        }
    }

    fn solve(&mut self, name: &str, art: &str, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let grid = &self.cfg.grid;
        let v = match &self.engine {
            Engine::Bs { p } => {
                let xg = match (grid.lo, grid.hi) {
                    (Some(lo), Some(hi)) => {
                        if lo.is_nan() || lo <= 0.0 {
                            bail!("log-price grid needs grid.lo > 0");
                        }
                        SpaceGrid::log_price(lo.ln(), hi.ln(), grid.space_points)?
                    }
                    _ => bs::default_grid(p, self.center(), grid.space_points)?,
                };
                let g = self.payoff.as_ref().ok_or_else(|| anyhow!("missing payoff"))?;
                bs::euro_pde_solve(g, p, &self.tgrid, &xg)?
            }
            Engine::Uvol { set, rate } => {
                let xg = match (grid.lo, grid.hi) {
                    (Some(lo), Some(hi)) => SpaceGrid::arithmetic(lo, hi, grid.space_points)?,
                    _ => {
                        let horizon = self.tgrid.horizon();
                        let half = 6.0 * (set.vol2.1 * horizon).sqrt()
                            + horizon * set.drift.0.abs().max(set.drift.1.abs());
                        let c = self.center();
                        SpaceGrid::arithmetic(c - half, c + half, grid.space_points)?
                    }
                };
                let g = self.payoff.as_ref().ok_or_else(|| anyhow!("missing payoff"))?;
                hjb_solve(g, set, *rate, &self.tgrid, &xg, &HjbConfig::default())?
            }
            Engine::Chain { set, terminal, .. } => {
                let cv = hjb_ode_solve(set, terminal, &self.tgrid)?;
                let v = cv.to_surface()?;
                self.chain_v = Some(cv);
                v
            }
        };
        out.write_with(art, |w| Ok(v.write_csv(w)?))?;
        let rows = vec![info_row(name, "max_abs", v.max_abs())];
        self.v = Some(v);
        Ok(rows)
    }

    fn binomial_compare(&self, name: &str, art: &str, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let p = self.bs_params()?;
        let emb = self.embedded()?;
        let v = self.v()?;
        let spots = self.spots(&self.cfg.oracle.spots, |c| (0..21).map(|j| c * (0.6 + 0.05 * j as f64)).collect());
        let spec = TreeSpec::binomial(self.cfg.oracle.tree_steps, StopMode::MaximizeStop);
        let fpay = emb.as_payoff();
        let theta = emb.theta_fn();
        let mut table = Vec::new();
        let (mut trees, mut surf) = (Vec::new(), Vec::new());
        for &x in &spots {
            let tree = american_binomial(&fpay, &p, &spec, 0.0, x)?;
            let v0 = v.interpolate(0, x);
            table.push(vec![x, theta.eval(x), tree, v0, tree - v0]);
            trees.push(tree);
            surf.push(v0);
        }
        out.write_with(art, |w| write_table(w, "x,theta,tree,v,diff", &table))?;
        let err = table.iter().fold(0.0f64, |m, r| m.max(r[4].abs()));
        let scale = self.payoff.as_ref().and_then(Payoff::strike).unwrap_or(1.0).max(1.0);
        let tol = self.tol(self.cfg.tolerances.binomial, 5e-3 * scale);
        Ok(vec![
            at_most(name, "max_abs_tree_minus_v", err, tol),
            info_row(name, "epsilon_sandwich", epsilon_sandwich_points(&trees, &surf)),
        ])
    }

    fn psor_compare(&self, name: &str, art: &str, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let p = self.bs_params()?;
        let emb = self.embedded()?;
        let v = self.v()?;
        let regions = self.regions.as_ref().ok_or_else(|| anyhow!("no regions"))?;
        let prob = ObstacleProblem::from_embedding(emb, p.rate);
        let res = psor_solve(&prob, &BlackScholesOperator::new(p), &PSORConfig::default())?;
        out.write_with(art, |w| Ok(res.surface.write_csv(w)?))?;
        let mut gap = 0.0f64;
        for i in 0..v.n_times() {
            for k in 0..v.n_space() {
                if i <= regions.stopping_start(k) {
                    gap = gap.max((res.surface.get(i, k) - v.get(i, k)).abs());
                }
            }
        }
        let tol = self.tol(self.cfg.tolerances.psor, self.order_default()?);
        let iters = res.iterations.iter().copied().max().unwrap_or(0);
        Ok(vec![
            at_most(name, "max_abs_psor_minus_v_before_theta", gap, tol),
            info_row(name, "max_iterations", iters as f64),
        ])
    }

    fn mc_hitting(&self, name: &str, art: &str, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let p = self.bs_params()?;
        let emb = self.embedded()?;
        let v = self.v()?;
        let spots = self.spots(&self.cfg.oracle.mc_spots, |c| [0.8, 0.9, 1.0, 1.1, 1.2].map(|m| m * c).to_vec());
        let n = self.cfg.oracle.mc_paths;
        let theta = emb.theta_fn();
        let fpay = emb.payoff_fn();
        let k_se = self.tol(self.cfg.tolerances.mc_stderr, 3.0);
        let mut table = Vec::new();
        let (mut min_rate, mut worst) = (1.0f64, f64::NEG_INFINITY);
        for (j, &x) in spots.iter().enumerate() {
            let seed = self.opts.seed.wrapping_add(j as u64);
            let paths = simulate_gbm_paths(&p, &self.tgrid, 0, x, n, seed)?;
            let hit = hitting_path_check(&theta, &self.tgrid, &paths)?;
            let est = mc_stop_at_theta(&fpay, &p, &theta, &self.tgrid, 0, x, n, seed)?;
            let v0 = v.interpolate(0, x);
            let diff = (est.mean - v0).abs();
            table.push(vec![x, hit.crossing_rate, est.mean, est.stderr, v0, diff]);
            min_rate = min_rate.min(hit.crossing_rate);
            // excess over the allowed band; non-positive means within
            worst = worst.max(diff - (k_se * est.stderr + 1e-12));
        }
        out.write_with(art, |w| write_table(w, "x,crossing_rate,mc_mean,stderr,v,abs_diff", &table))?;
        Ok(vec![
            at_least(name, "min_crossing_rate", min_rate, 1.0),
            at_most(name, "max_excess_over_stderr_band", worst, 0.0),
        ])
    }

    fn game_tree_compare(&self, name: &str, art: &str, out: &mut OutputDir) -> anyhow::Result<Vec<SummaryRow>> {
        let Engine::Uvol { set, rate } = &self.engine else {
            bail!("game-tree-compare needs the uvol model");
        };
        if set.drift.0 != set.drift.1 || set.jump.as_ref().is_some_and(|j| j.intensity > 0.0) {
            bail!("the game tree covers variance uncertainty only; fix the drift and disable jumps");
        }
        let emb = self.embedded()?;
        let v = self.v()?;
        let params = ArithmeticParams {
            rate: *rate,
            drift: set.drift.0,
            maturity: self.tgrid.horizon(),
        };
        let spec = TreeSpec::trinomial(
            self.cfg.oracle.tree_steps,
            StopMode::MinimizeStop,
            set.vol2.0.sqrt(),
            set.vol2.1.sqrt(),
        );
        let spread = 2.0 * (set.vol2.1 * self.tgrid.horizon()).sqrt();
        let spots = self.spots(&self.cfg.oracle.spots, |c| {
            [-1.0, -0.5, 0.0, 0.5, 1.0].map(|m| c + m * spread).to_vec()
        });
        let hpay = emb.as_payoff();
        let mut table = Vec::new();
        for &x in &spots {
            let tree = game_tree(&hpay, &params, &spec, 0.0, x, self.cfg.oracle.game_tree_scan)?;
            let v0 = v.interpolate(0, x);
            table.push(vec![x, emb.theta_fn().eval(x), tree, v0, tree - v0]);
        }
        out.write_with(art, |w| write_table(w, "x,theta,tree,v,diff", &table))?;
        let err = table.iter().fold(0.0f64, |m, r| m.max(r[4].abs()));
        let tol = self.tol(self.cfg.tolerances.game_tree, 5e-3);
        Ok(vec![at_most(name, "max_abs_tree_minus_v", err, tol)])
    }
}
