mod common;

use common::bachelier_call;
use embedlab_core::grid::{SpaceGrid, TimeGrid};
use embedlab_core::oracle::{game_tree, ArithmeticParams, StopMode, TreeSpec};
use embedlab_core::payoff::Payoff;
use embedlab_core::surfaces::ValueSurface;
use embedlab_core::uvol::{
    build_game_value, check_const_stop, hjb_solve, merton_validation, HjbConfig, MertonCase, UncertaintySet,
};

fn grids() -> (TimeGrid, SpaceGrid) {
    (TimeGrid::new(1.0, 200).unwrap(), SpaceGrid::arithmetic(-0.8, 2.8, 361).unwrap())
}

fn solve(g: &Payoff, c: (f64, f64), rate: f64) -> ValueSurface {
    let (tg, xg) = grids();
    let set = UncertaintySet::new((0.0, 0.0), c, None).unwrap();
    hjb_solve(g, &set, rate, &tg, &xg, &HjbConfig::default()).unwrap()
}

fn max_gap(a: &ValueSurface, b: &ValueSurface) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn convex_payoff_sees_only_the_top_variance() {
    let call = Payoff::call(1.0);
    let v = solve(&call, (0.01, 0.09), 0.0);
    assert!(max_gap(&v, &solve(&call, (0.09, 0.09), 0.0)) < 1e-3);
}

#[test]
fn concave_payoff_sees_only_the_bottom_variance() {
    let tent = Payoff::from_fn("tent", |x: f64| -(x - 1.0).abs());
    let v = solve(&tent, (0.01, 0.09), 0.0);
    assert!(max_gap(&v, &solve(&tent, (0.01, 0.01), 0.0)) < 1e-3);
}

#[test]
fn call_matches_bachelier_at_time_zero() {
    let v = solve(&Payoff::call(1.0), (0.01, 0.09), 0.0);
    for (k, &x) in v.xgrid().states().iter().enumerate() {
        if (0.2..=1.8).contains(&x) {
            let e = bachelier_call(x, 1.0, 0.09, 1.0);
            assert!((v.get(0, k) - e).abs() < 5e-4, "x={x}: {} vs {e}", v.get(0, k));
        }
    }
}

#[test]
fn wider_variance_interval_never_lowers_the_value() {
    let g = Payoff::from_fn("wave", |x: f64| (3.0 * x).sin());
    let narrow = solve(&g, (0.03, 0.05), 0.01);
    let wide = solve(&g, (0.01, 0.09), 0.01);
    assert!(wide.values().iter().zip(narrow.values()).all(|(w, n)| *w >= n - 1e-12));
}

#[test]
fn ordered_payoffs_give_ordered_values() {
    let lo = solve(&Payoff::call(1.1), (0.01, 0.09), 0.02);
    let hi = solve(&Payoff::call(0.9), (0.01, 0.09), 0.02);
    assert!(hi.values().iter().zip(lo.values()).all(|(h, l)| *h >= l - 1e-12));
}

fn merton(intensity: f64) -> f64 {
    let case = MertonCase {
        strike: 100.0,
        sigma: 0.2,
        rate: 0.05,
        maturity: 1.0,
        intensity,
        jump_mean: -0.1,
        jump_std: 0.15,
    };
    let y = 100f64.ln();
    let tg = TimeGrid::new(1.0, 400).unwrap();
    let xg = SpaceGrid::arithmetic(y - 2.5, y + 2.5, 801).unwrap();
    merton_validation(&case, &tg, &xg, 100.0).unwrap().discrepancy
}

#[test]
fn merton_without_jumps() {
    let d = merton(0.0);
    assert!(d <= 5e-3, "{d}");
}

#[test]
fn merton_with_lognormal_jumps() {
    let d = merton(1.0);
    assert!(d <= 1e-2, "{d}");
}

#[test]
fn pasted_game_value_dominates_v() {
    let v = solve(&Payoff::put(1.0), (0.01, 0.09), 0.05);
    let (h, w, _) = build_game_value(&v).unwrap();
    assert!(w.values().iter().zip(v.values()).all(|(a, b)| *a >= b - 1e-12));
    for k in 0..v.n_space() {
        assert!((0..v.n_times()).all(|i| v.get(i, k) <= h.payoff()[k] + 1e-12));
    }
}

#[test]
fn call_game_value_is_constant_after_stopping() {
    let v = solve(&Payoff::call(1.0), (0.01, 0.09), 0.0);
    let (h, w, _) = build_game_value(&v).unwrap();
    assert_eq!(check_const_stop(&w, &h, 1e-2).unwrap().violations, 0);
}

#[test]
fn game_tree_reproduces_v_for_a_discounted_put() {
    let v = solve(&Payoff::put(1.0), (0.01, 0.09), 0.05);
    let (h, _, _) = build_game_value(&v).unwrap();
    let params = ArithmeticParams {
        rate: 0.05,
        drift: 0.0,
        maturity: 1.0,
    };
    let spec = TreeSpec::trinomial(2000, StopMode::MinimizeStop, 0.1, 0.3);
    let hpay = h.as_payoff();
    for x in [0.6, 0.8, 1.0, 1.2, 1.4] {
        let tree = game_tree(&hpay, &params, &spec, 0.0, x, 3).unwrap();
        assert!((tree - v.interpolate(0, x)).abs() < 5e-3, "x={x}: {tree} vs {}", v.interpolate(0, x));
    }
}
