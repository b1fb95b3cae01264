mod common;

use common::bs_put;
use embedlab_core::bs::{self, BSParams};
use embedlab_core::embedding::epsilon_sandwich_points;
use embedlab_core::grid::{GridFunction, TimeGrid};
use embedlab_core::oracle::{
    american_binomial, european_binomial, mc_stop_at_theta, psor_solve, ObstacleProblem, PSORConfig, StopMode,
    TreeSpec,
};
use embedlab_core::embedding::BlackScholesOperator;
use embedlab_core::payoff::Payoff;
use embedlab_core::surfaces::{build_regions, default_plateau_tol, extract_embedding, Direction, EmbeddedPayoff, ValueSurface};

fn params(rate: f64) -> BSParams {
    BSParams::new(rate, 0.2, 1.0).unwrap()
}

fn put_run(nt: usize, nx: usize) -> (ValueSurface, EmbeddedPayoff) {
    let p = params(0.05);
    let tg = TimeGrid::new(1.0, nt).unwrap();
    let xg = bs::default_grid(&p, 100.0, nx).unwrap();
    let v = bs::euro_pde_solve(&Payoff::put(100.0), &p, &tg, &xg).unwrap();
    let f = extract_embedding(&v, Direction::Min, default_plateau_tol(&v)).unwrap();
    (v, f)
}

#[test]
fn zero_rate_american_put_is_european() {
    let p = params(0.0);
    let spec = TreeSpec::binomial(2000, StopMode::MaximizeStop);
    let am = american_binomial(&Payoff::put(100.0), &p, &spec, 0.0, 100.0).unwrap();
    let exact = bs_put(100.0, 100.0, 0.0, 0.2, 1.0);
    assert!((exact - 7.9656).abs() < 1e-4);
    // no early-exercise premium at r = 0, only lattice error
    assert!((am - exact).abs() < 2e-3, "{am} vs {exact}");
}

#[test]
fn american_dominates_european_on_the_lattice() {
    let p = params(0.05);
    let spec = TreeSpec::binomial(500, StopMode::MaximizeStop);
    for x in [80.0, 100.0, 120.0] {
        for g in [Payoff::put(100.0), Payoff::call(95.0), Payoff::digital(100.0)] {
            let am = american_binomial(&g, &p, &spec, 0.0, x).unwrap();
            let eu = european_binomial(&g, &p, &spec, 0.0, x).unwrap();
            assert!(am >= eu, "{} at {x}", g.label());
        }
    }
}

#[test]
fn american_is_monotone_in_the_payoff() {
    let p = params(0.05);
    let spec = TreeSpec::binomial(400, StopMode::MaximizeStop);
    let lo = american_binomial(&Payoff::put(95.0), &p, &spec, 0.0, 100.0).unwrap();
    let hi = american_binomial(&Payoff::put(105.0), &p, &spec, 0.0, 100.0).unwrap();
    assert!(lo <= hi);
}

#[test]
fn embedded_put_tree_matches_surface() {
    // 200x400 with 2000 steps gives 5.3e-3; the gap is grid error and halves here
    let (v, f) = put_run(400, 801);
    let p = params(0.05);
    let spec = TreeSpec::binomial(4000, StopMode::MaximizeStop);
    let fpay = f.as_payoff();
    let spots: Vec<f64> = (0..21).map(|j| 60.0 + 5.0 * j as f64).collect();
    let tree: Vec<f64> = spots.iter().map(|&x| american_binomial(&fpay, &p, &spec, 0.0, x).unwrap()).collect();
    let surf: Vec<f64> = spots.iter().map(|&x| v.interpolate(0, x)).collect();
    assert!(epsilon_sandwich_points(&tree, &surf) <= 5e-3);
}

#[test]
fn unconstrained_psor_reproduces_european_solver() {
    let p = params(0.05);
    let tg = TimeGrid::new(1.0, 100).unwrap();
    let xg = bs::default_grid(&p, 100.0, 201).unwrap();
    let g = Payoff::put(100.0);
    let v = bs::euro_pde_solve(&g, &p, &tg, &xg).unwrap();
    let prob = ObstacleProblem::unconstrained(&g, &p, tg, xg);
    let cfg = PSORConfig::default();
    let out = psor_solve(&prob, &BlackScholesOperator::new(p), &cfg).unwrap();
    let gap = out.surface.values().iter().zip(v.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap < 1e-5, "{gap}");
}

fn psor_gap_before_theta(nt: usize, nx: usize) -> f64 {
    let (v, f) = put_run(nt, nx);
    let p = params(0.05);
    let regions = build_regions(&f, v.tgrid()).unwrap();
    let out = psor_solve(
        &ObstacleProblem::from_embedding(&f, p.rate),
        &BlackScholesOperator::new(p),
        &PSORConfig::default(),
    )
    .unwrap();
    let s = &out.surface;
    let mut gap = 0.0f64;
    for k in 0..v.n_space() {
        for i in 0..regions.stopping_start(k).min(v.n_times()) {
            gap = gap.max((s.get(i, k) - v.get(i, k)).abs());
        }
        for i in 0..v.n_times() {
            assert!(s.get(i, k) >= f.payoff()[k] - 1e-8, "infeasible at ({i}, {k})");
        }
    }
    gap
}

#[test]
fn psor_on_embedded_put_matches_v_before_theta() {
    // worst near the theta jump around x = 87; shrinks with the grid
    let coarse = psor_gap_before_theta(200, 401);
    let fine = psor_gap_before_theta(400, 801);
    assert!(fine < 0.5 * coarse, "{coarse} -> {fine}");
    assert!(fine < 5e-3, "{fine}");
}

#[test]
fn mc_with_terminal_theta_is_european() {
    let (v, f) = put_run(100, 201);
    let p = params(0.05);
    let tg = *v.tgrid();
    let theta = GridFunction::constant(*v.xgrid(), 1.0);
    let payoff = GridFunction::new(*v.xgrid(), v.row(tg.n_steps()).to_vec()).unwrap();
    let est = mc_stop_at_theta(&payoff, &p, &theta, &tg, 0, 100.0, 20_000, 11).unwrap();
    let exact = bs_put(100.0, 100.0, 0.05, 0.2, 1.0);
    assert!((est.mean - exact).abs() <= 3.0 * est.stderr, "{} ± {}", est.mean, est.stderr);
    assert_eq!(est.crossing_rate, 1.0);
    let _ = f;
}

#[test]
fn mc_at_put_theta_recovers_value() {
    let (v, f) = put_run(200, 401);
    let p = params(0.05);
    let tg = *v.tgrid();
    for (j, x) in [90.0, 100.0, 110.0].into_iter().enumerate() {
        let est = mc_stop_at_theta(&f.payoff_fn(), &p, &f.theta_fn(), &tg, 0, x, 100_000, 50 + j as u64).unwrap();
        let exact = bs_put(x, 100.0, 0.05, 0.2, 1.0);
        assert!((est.mean - exact).abs() <= 3.0 * est.stderr, "x={x}: {} ± {}", est.mean, est.stderr);
    }
}
