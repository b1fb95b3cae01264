use embedlab_core::chain::{
    chain_embed, chain_stop_value, embed_inverse, hjb_ode_solve, linear_chain_value, nisio_iterate, GeneratorMatrix,
    GeneratorSet, InverseConfig,
};
use embedlab_core::grid::TimeGrid;
use embedlab_core::surfaces::{build_regions, Direction};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_state(a: f64, b: f64) -> GeneratorMatrix {
    GeneratorMatrix::from_rows(&[vec![-a, a], vec![b, -b]]).unwrap()
}

// e^{tQ} for Q = [[-a, a], [b, -b]] via its stationary projection
fn two_state_exp(a: f64, b: f64, t: f64, g: [f64; 2]) -> [f64; 2] {
    let s = a + b;
    let mean = (b * g[0] + a * g[1]) / s;
    let decay = (-s * t).exp();
    [mean + decay * (g[0] - mean), mean + decay * (g[1] - mean)]
}

#[test]
fn two_state_chain_matches_closed_form() {
    let (a, b) = (1.3, 0.4);
    let tg = TimeGrid::new(2.0, 50).unwrap();
    let v = linear_chain_value(&two_state(a, b), &[1.0, -2.0], None, &tg).unwrap();
    for i in 0..tg.n_nodes() {
        let e = two_state_exp(a, b, 2.0 - tg.node(i), [1.0, -2.0]);
        assert!((v.at(i)[0] - e[0]).abs() < 1e-12 && (v.at(i)[1] - e[1]).abs() < 1e-12);
    }
}

#[test]
fn running_cost_adds_its_integral() {
    let tg = TimeGrid::new(1.0, 100).unwrap();
    let cost = |_t: f64, _x: usize| 0.5;
    let v = linear_chain_value(&two_state(1.0, 1.0), &[0.0, 0.0], Some(&cost), &tg).unwrap();
    assert!((v.at(0)[0] - 0.5).abs() < 1e-12 && (v.at(0)[1] - 0.5).abs() < 1e-12);
}

#[test]
fn singleton_hjb_is_linear() {
    let q = two_state(1.3, 0.4);
    let tg = TimeGrid::new(1.0, 1000).unwrap();
    let g = [0.2, 1.0];
    let hjb = hjb_ode_solve(&GeneratorSet::singleton(q.clone()), &g, &tg).unwrap();
    let lin = linear_chain_value(&q, &g, None, &tg).unwrap();
    for i in 0..tg.n_nodes() {
        assert!((hjb.at(i) - lin.at(i)).amax() < 1e-10);
    }
}

#[test]
fn adding_the_zero_generator_dominates_both() {
    let q = two_state(2.0, 0.5);
    let z = GeneratorMatrix::zero(2);
    let tg = TimeGrid::new(1.0, 1000).unwrap();
    let g = [0.0, 1.0];
    let both = hjb_ode_solve(&GeneratorSet::new(vec![q.clone(), z.clone()]).unwrap(), &g, &tg).unwrap();
    for single in [q, z] {
        let s = hjb_ode_solve(&GeneratorSet::singleton(single), &g, &tg).unwrap();
        for i in 0..tg.n_nodes() {
            assert!(both.at(i).iter().zip(s.at(i).iter()).all(|(a, b)| *a >= b - 1e-12));
        }
    }
}

#[test]
fn nisio_converges_upward_to_the_ode() {
    let set = GeneratorSet::random(3, 4, 2.0, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
    let ode = hjb_ode_solve(&set, &g, &TimeGrid::new(1.0, 5000).unwrap()).unwrap();
    let mut prev: Option<DVector<f64>> = None;
    for depth in 0..=12 {
        let w = nisio_iterate(&set, &g, 1.0, depth).unwrap();
        if let Some(p) = &prev {
            assert!(w.iter().zip(p.iter()).all(|(a, b)| *a >= b - 1e-14), "depth {depth}");
        }
        prev = Some(w);
    }
    assert!((prev.unwrap() - ode.at(0)).amax() < 1e-4);
}

#[test]
fn random_generators_are_valid() {
    let set = GeneratorSet::random(5, 6, 3.0, 99).unwrap();
    for q in set.members() {
        assert!(q.norm_inf() <= 3.0 + 1e-12);
        let m = q.matrix();
        for i in 0..6 {
            assert!(m.row(i).sum().abs() < 1e-12);
            assert!((0..6).all(|j| i == j || m[(i, j)] >= 0.0));
        }
    }
}

#[test]
fn invalid_generators_rejected() {
    assert!(GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -0.5]]).is_err());
    assert!(GeneratorMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).is_err());
}

#[test]
fn stop_value_dominates_v_and_meets_h_on_theta() {
    let set = GeneratorSet::new(vec![
        GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap(),
        GeneratorMatrix::zero(2),
    ])
    .unwrap();
    let tg = TimeGrid::new(1.0, 1000).unwrap();
    let v = hjb_ode_solve(&set, &[0.0, 1.0], &tg).unwrap();
    let h = chain_embed(&v, Direction::Max).unwrap();
    let w = chain_stop_value(&set, h.payoff(), &tg, Direction::Min).unwrap();
    let regions = build_regions(&h, &tg).unwrap();
    for x in 0..2 {
        for i in 0..tg.n_nodes() {
            assert!(w.at(i)[x] >= v.at(i)[x] - 1e-12);
            assert!(w.at(i)[x] <= h.payoff()[x] + 1e-12);
        }
        let s = regions.stopping_start(x).min(tg.n_steps());
        assert!((w.at(s)[x] - h.payoff()[x]).abs() < 1e-12);
    }
}

#[test]
fn zero_generator_embedding_is_the_terminal_payoff() {
    let tg = TimeGrid::new(1.0, 10).unwrap();
    let g = [0.3, -1.0, 2.0];
    let v = hjb_ode_solve(&GeneratorSet::singleton(GeneratorMatrix::zero(3)), &g, &tg).unwrap();
    for dir in [Direction::Min, Direction::Max] {
        assert_eq!(chain_embed(&v, dir).unwrap().payoff(), &g[..]);
    }
}

#[test]
fn inverse_recovers_the_terminal_payoff() {
    let q = two_state(1.0, 1.0);
    let horizon = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = InverseConfig::default();
    for _ in 0..20 {
        let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let tg = TimeGrid::new(horizon, 400).unwrap();
        let v = linear_chain_value(&q, &g, None, &tg).unwrap();
        let f = chain_embed(&v, Direction::Min).unwrap();
        let res = embed_inverse(f.payoff(), &q, horizon, Direction::Min, &cfg).unwrap();
        assert!(res.converged, "{g:?}: residual {}", res.residual);
        let fwd = linear_chain_value(&q, &res.g, None, &tg).unwrap();
        let f2 = chain_embed(&fwd, Direction::Min).unwrap();
        let err = f2.payoff().iter().zip(f.payoff()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "{g:?}: {err}");
    }
}
