mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use declqr::blockmat::selector;
use declqr::controller::{
    feasibility, noise_response, policy_cost, realize, realize_steady, simulate, simulate_measured,
    stability_check,
};
use declqr::fixtures;
use declqr::generate::random_problem;
use declqr::infograph::label_sets;
use declqr::problem::{is_psd, NoiseSampler};
use declqr::riccati::{finite_horizon, optimal_cost, steady_state, GainSchedule};
use declqr::{delay_matrix, BlockPartition, Edge, Horizon, InfoGraph, LqProblem, NetworkGraph, NodeSet};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn value_matrices_are_symmetric_psd_and_complete_the_square(seed in any::<u64>()) {
        let (g, p) = common::instance(seed, 4, 2, 4);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let (vs, ks) = finite_horizon(&p, &ig).unwrap();
        let mut rng = common::rng(seed ^ 0x5eed);
        for t in 0..vs.x.len() {
            for x in &vs.x[t] {
                let scale = 1.0 + common::max_abs(x);
                prop_assert!(common::max_abs(&(x - x.transpose())) <= 1e-12 * scale);
                prop_assert!(is_psd(x));
            }
        }
        for t in 0..ks.steps() {
            for r in 0..ig.len() {
                let (gamma, omega, k, x) = (&vs.gamma[t][r], &vs.omega[t][r], ks.gain(t, r), &vs.x[t][r]);
                prop_assert!(omega.clone().cholesky().is_some());
                let (nz, nv) = (k.ncols(), k.nrows());
                let z = DVector::from_fn(nz, |_, _| rng.random_range(-1.0..1.0));
                let v = DVector::from_fn(nv, |_, _| rng.random_range(-1.0..1.0));
                let zv = DVector::from_iterator(nz + nv, z.iter().chain(v.iter()).copied());
                let e = &v - k * &z;
                let lhs = (zv.transpose() * gamma * &zv)[0] - (e.transpose() * omega * &e)[0];
                let rhs = (z.transpose() * x * &z)[0];
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn measured_rollout_matches_noise_driven_rollout(seed in any::<u64>()) {
        let (g, p) = common::instance(seed, 4, 2, 5);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let (_, ks) = finite_horizon(&p, &ig).unwrap();
        let cr = realize(&p, &ig, &ks).unwrap();
        let dist = p.sample_disturbances(seed).unwrap();
        let (a, b) = (simulate(&cr, &p, &dist).unwrap(), simulate_measured(&cr, &p, &dist).unwrap());
        for t in 0..a.zeta.len() {
            prop_assert!((&a.x[t] - &b.x[t]).amax() <= 1e-9);
            prop_assert!((cr.compose_state(&b.zeta[t]) - &b.x[t]).amax() <= 1e-12 * (1.0 + b.x[t].amax()));
            for (za, zb) in a.zeta[t].iter().zip(&b.zeta[t]) {
                prop_assert!((za - zb).amax() <= 1e-9);
            }
        }
    }

    #[test]
    fn cost_offsets_accumulate_root_noise(seed in any::<u64>()) {
        let (g, p) = common::instance(seed, 4, 2, 4);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let (vs, _) = finite_horizon(&p, &ig).unwrap();
        let xs = p.partition().states();
        let steps = p.steps().unwrap();
        prop_assert_eq!(vs.c[steps], 0.0);
        for t in 0..steps {
            let mut expected = 0.0;
            for i in 0..p.partition().node_count() {
                let s = ig.root(i);
                let sel = selector(&NodeSet::singleton(i), ig.node(s), xs).unwrap();
                let block = &sel * &vs.x[t + 1][s] * sel.transpose();
                expected += (block * &p.stage(t).w[i]).trace();
            }
            let got = vs.c[t] - vs.c[t + 1];
            prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn realized_policy_is_feasible_and_decomposes(seed in any::<u64>()) {
        let (g, p) = common::instance(seed, 4, 2, 5);
        let d = delay_matrix(&g).unwrap();
        let ig = InfoGraph::build(&d);
        let (vs, ks) = finite_horizon(&p, &ig).unwrap();
        let cr = realize(&p, &ig, &ks).unwrap();
        let resp = noise_response(&cr, &p).unwrap();
        let report = feasibility(&resp, &ig, &d, &p);
        prop_assert!(report.exact(), "{:?}", report);

        let xs = p.partition().states();
        let v = NodeSet::full(p.partition().node_count());
        for t in 0..resp.x.len() {
            let mut sum = DMatrix::zeros(xs.total(), resp.basis.dim());
            for (s, z) in resp.zeta[t].iter().enumerate() {
                sum += selector(&v, ig.node(s), xs).unwrap() * z;
            }
            prop_assert!(common::max_abs(&(sum - &resp.x[t])) <= 1e-10);
        }

        let exact = policy_cost(&cr, &p).unwrap();
        let predicted = optimal_cost(&vs, &p, &ig);
        prop_assert!((exact - predicted).abs() <= 1e-8 * (1.0 + predicted.abs()));

        let dist = p.sample_disturbances(seed).unwrap();
        let traj = simulate(&cr, &p, &dist).unwrap();
        prop_assert!(traj.decomposition_error(&cr) <= 1e-10);
    }

    #[test]
    fn self_loop_values_ignore_data_outside_the_loop(seed in any::<u64>()) {
        let (g, p) = common::instance(seed, 4, 2, 3);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let (vs, _) = finite_horizon(&p, &ig).unwrap();
        for s in ig.self_loops() {
            let outside: Vec<usize> = (0..p.partition().node_count())
                .filter(|&i| !ig.node(s).contains(i))
                .collect();
            if outside.is_empty() {
                continue;
            }
            let mut q = p.clone();
            for stage in q.stages_mut() {
                for &i in &outside {
                    let (dx, du) = (p.partition().states().dim(i), p.partition().inputs().dim(i));
                    let qi = stage.q.block(i, i) + DMatrix::identity(dx, dx) * 3.0;
                    stage.q.set_block(i, i, &qi).unwrap();
                    let ri = stage.r.block(i, i) + DMatrix::identity(du, du) * 2.0;
                    stage.r.set_block(i, i, &ri).unwrap();
                    let ai = stage.a.block(i, i) * -1.7;
                    stage.a.set_block(i, i, &ai).unwrap();
                }
            }
            let (vq, _) = finite_horizon(&q, &ig).unwrap();
            for t in 0..vs.x.len() {
                prop_assert_eq!(&vs.x[t][s], &vq.x[t][s]);
            }
        }
    }
}

fn isolated(n: usize) -> NetworkGraph {
    NetworkGraph::new((1..=n as u32).collect(), vec![])
}

#[test]
fn single_node_matches_textbook_recursion() {
    let mut rng = common::rng(17);
    for _ in 0..10 {
        let g = isolated(1);
        let p = random_problem(&mut rng, &g, 3, 6).unwrap();
        let p = LqProblem::time_invariant(
            p.partition().clone(),
            Horizon::Finite(6),
            p.stage(0).a.entries().clone(),
            p.stage(0).b.entries().clone(),
            p.stage(0).q.entries().clone(),
            p.stage(0).r.entries().clone(),
            p.stage(0).s.entries().clone(),
            p.qf().entries().clone(),
            p.stage(0).w.clone(),
            p.sigma0().to_vec(),
        )
        .unwrap();
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let (vs, ks) = finite_horizon(&p, &ig).unwrap();
        let st = p.stage(0);
        let oracle = common::textbook_lqr(
            st.a.entries(),
            st.b.entries(),
            st.q.entries(),
            st.r.entries(),
            st.s.entries(),
            p.qf().entries(),
            &st.w[0],
            &p.sigma0()[0],
            6,
        );
        for t in 0..=6 {
            assert!(common::max_abs(&(&vs.x[t][0] - &oracle.p[t])) <= 1e-12 * (1.0 + common::max_abs(&oracle.p[t])));
        }
        for t in 0..6 {
            assert!(common::max_abs(&(ks.gain(t, 0) - &oracle.k[t])) <= 1e-12 * (1.0 + common::max_abs(&oracle.k[t])));
        }
        let v0 = optimal_cost(&vs, &p, &ig);
        assert!((v0 - oracle.cost).abs() <= 1e-12 * oracle.cost);
    }
}

#[test]
fn converged_terminal_weight_gives_constant_values() {
    let mut rng = common::rng(3);
    let g = isolated(1);
    let base = random_problem(&mut rng, &g, 2, 1).unwrap();
    let st = base.stage(0);
    let p = LqProblem::time_invariant(
        base.partition().clone(),
        Horizon::Infinite,
        st.a.entries().clone(),
        st.b.entries().clone(),
        st.q.entries().clone(),
        st.r.entries().clone(),
        st.s.entries().clone(),
        st.q.entries().clone(),
        st.w.clone(),
        base.sigma0().to_vec(),
    )
    .unwrap();
    let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
    let ss = steady_state(&p, &ig, 1e-13, 100_000).unwrap();
    let fixed = p.with_horizon(30).unwrap().with_terminal_weight(ss.x[0].clone()).unwrap();
    let (vs, _) = finite_horizon(&fixed, &ig).unwrap();
    for x in &vs.x {
        assert!(common::max_abs(&(&x[0] - &ss.x[0])) <= 1e-9 * (1.0 + common::max_abs(&ss.x[0])));
    }
}

#[test]
fn decoupled_nodes_are_independent_lqr_problems() {
    let mut rng = common::rng(8);
    let g = isolated(2);
    let p = random_problem(&mut rng, &g, 2, 4).unwrap();
    let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
    assert_eq!(ig.len(), 2);
    assert_eq!(ig.self_loops(), vec![0, 1]);
    let (vs, ks) = finite_horizon(&p, &ig).unwrap();
    // Time-varying data: run the textbook recursion one step at a time.
    for i in 0..2 {
        let set = NodeSet::singleton(i);
        let mut x = p.qf().submatrix(&set, &set).unwrap();
        for t in (0..4).rev() {
            let st = p.stage(t);
            let blk = |m: &declqr::BlockMatrix| m.submatrix(&set, &set).unwrap();
            let step = common::textbook_lqr(
                &blk(&st.a), &blk(&st.b), &blk(&st.q), &blk(&st.r), &blk(&st.s), &x,
                &st.w[i], &p.sigma0()[i], 1,
            );
            assert!(common::max_abs(&(ks.gain(t, i) - &step.k[0])) <= 1e-12 * (1.0 + common::max_abs(&step.k[0])));
            x = step.p[0].clone();
            assert!(common::max_abs(&(&vs.x[t][i] - &x)) <= 1e-12 * (1.0 + common::max_abs(&x)));
        }
    }
}

#[test]
fn downstream_of_instant_link_solves_its_own_lqr() {
    let g = NetworkGraph::new(vec![1, 2], vec![Edge { from: 1, to: 2, delay: 0 }]);
    let mut rng = common::rng(21);
    let p = random_problem(&mut rng, &g, 2, 3).unwrap();
    let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
    let two = ig.index_of(&NodeSet::singleton(1)).unwrap();
    assert!(ig.is_self_loop(two));
    let (vs, _) = finite_horizon(&p, &ig).unwrap();
    let set = NodeSet::singleton(1);
    let mut x = p.qf().submatrix(&set, &set).unwrap();
    for t in (0..3).rev() {
        let st = p.stage(t);
        let blk = |m: &declqr::BlockMatrix| m.submatrix(&set, &set).unwrap();
        x = common::textbook_lqr(
            &blk(&st.a), &blk(&st.b), &blk(&st.q), &blk(&st.r), &blk(&st.s), &x,
            &st.w[1], &p.sigma0()[1], 1,
        )
        .p[0]
            .clone();
        assert!(common::max_abs(&(&vs.x[t][two] - &x)) <= 1e-12 * (1.0 + common::max_abs(&x)));
    }
}

#[test]
fn gain_perturbations_raise_cost_quadratically() {
    let p = fixtures::example1_problem();
    let ig = InfoGraph::build(&delay_matrix(&fixtures::example1_graph()).unwrap());
    let (_, ks) = finite_horizon(&p, &ig).unwrap();
    let cr = realize(&p, &ig, &ks).unwrap();
    let resp = noise_response(&cr, &p).unwrap();
    let base = policy_cost(&cr, &p).unwrap();
    let mut rng = common::rng(99);
    let cost_at = |t: usize, r: usize, dir: &DMatrix<f64>, eps: f64| {
        let mut k = ks.clone();
        k.k[t][r] += dir * eps;
        policy_cost(&realize(&p, &ig, &k).unwrap(), &p).unwrap()
    };
    for t in 0..ks.steps() {
        for r in 0..ig.len() {
            let shape = ks.gain(t, r).shape();
            let dir = DMatrix::from_fn(shape.0, shape.1, |_, _| rng.random_range(-1.0..1.0));
            let (d1, d2) = (cost_at(t, r, &dir, 1e-2) - base, cost_at(t, r, &dir, 2e-2) - base);
            if resp.zeta[t][r].iter().all(|&v| v == 0.0) {
                // No noise reaches this internal state yet, so its gain is inert.
                assert_eq!((d1, d2), (0.0, 0.0));
                continue;
            }
            let dm = cost_at(t, r, &dir, -1e-2) - base;
            assert!(d1 > 0.0 && d2 > 0.0 && dm > 0.0, "t={t} r={r}: {d1} {d2} {dm}");
            assert!((d2 / d1 - 4.0).abs() < 1e-3, "t={t} r={r}: ratio {}", d2 / d1);
            assert!((dm / d1 - 1.0).abs() < 1e-3);
        }
    }
}

/// Columns of the stacked noise basis belonging to label set `L_t^s`.
fn label_columns(resp: &declqr::controller::NoiseResponse, ig: &InfoGraph, t: usize, s: usize) -> Vec<usize> {
    let labels = label_sets(ig, t);
    resp.basis
        .symbols()
        .iter()
        .enumerate()
        .filter(|(_, sym)| labels[s].contains(sym))
        .flat_map(|(k, _)| resp.basis.columns(k))
        .collect()
}

#[test]
fn internal_states_are_conditional_estimates_exactly() {
    let (g, p) = (fixtures::example1_graph(), fixtures::example1_problem());
    let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
    let (_, ks) = finite_horizon(&p, &ig).unwrap();
    let cr = realize(&p, &ig, &ks).unwrap();
    let resp = noise_response(&cr, &p).unwrap();
    let xs = p.partition().states();
    let v = NodeSet::full(3);
    for t in 0..resp.x.len() {
        for s in 0..ig.len() {
            let cols = label_columns(&resp, &ig, t, s);
            let proj = selector(ig.node(s), &v, xs).unwrap() * &resp.x[t];
            let diff = proj.select_columns(&cols) - resp.zeta[t][s].select_columns(&cols);
            assert!(common::max_abs(&diff) <= 1e-12);
        }
    }
}

#[test]
fn internal_states_are_conditional_estimates_statistically() {
    let (g, p) = (fixtures::example1_graph(), fixtures::example1_problem());
    let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
    let (_, ks) = finite_horizon(&p, &ig).unwrap();
    let cr = realize(&p, &ig, &ks).unwrap();
    let resp = noise_response(&cr, &p).unwrap();
    let xs = p.partition().states();
    let v = NodeSet::full(3);
    let sampler = NoiseSampler::new(&p).unwrap();
    let mut rng = common::rng(2026);
    let rollouts = 100_000;
    let samples: Vec<_> = (0..rollouts)
        .map(|_| {
            let dist = sampler.sample(&mut rng);
            let noise = resp.basis.stack(xs, &dist);
            (noise, simulate(&cr, &p, &dist).unwrap().x)
        })
        .collect();

    for t in 1..resp.x.len() {
        for s in 0..ig.len() {
            let cols = label_columns(&resp, &ig, t, s);
            let sel = selector(ig.node(s), &v, xs).unwrap();
            let m = cols.len();
            let (mut gram, mut cross) = (DMatrix::zeros(m, m), DMatrix::zeros(m, sel.nrows()));
            let mut ys = Vec::with_capacity(rollouts);
            for (noise, x) in &samples {
                let z = DVector::from_iterator(m, cols.iter().map(|&c| noise[c]));
                let y = &sel * &x[t];
                gram += &z * z.transpose();
                cross += &z * y.transpose();
                ys.push((z, y));
            }
            let chol = gram.clone().cholesky().unwrap();
            let coef = chol.solve(&cross).transpose();
            let target = resp.zeta[t][s].select_columns(&cols);

            // Standard errors of the least-squares coefficients.
            let inv = chol.inverse();
            let mut sse = DVector::zeros(sel.nrows());
            for (z, y) in &ys {
                let e = y - &coef * z;
                sse += e.component_mul(&e);
            }
            let dof = (rollouts - m) as f64;
            for row in 0..coef.nrows() {
                for c in 0..m {
                    let se = (sse[row] / dof * inv[(c, c)]).sqrt();
                    let err = (coef[(row, c)] - target[(row, c)]).abs();
                    assert!(err <= 5.0 * se + 1e-12, "t={t} s={s}: error {err:e}, standard error {se:e}");
                    assert!(err <= 2e-2, "t={t} s={s}: error {err:e}");
                }
            }
        }
    }
}

#[test]
fn scalar_fixed_point_is_stable() {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let p = LqProblem::time_invariant(
        BlockPartition::scalar(1),
        Horizon::Infinite,
        one(1.0),
        one(1.0),
        one(1.0),
        one(1.0),
        one(0.0),
        one(1.0),
        vec![one(1.0)],
        vec![one(1.0)],
    )
    .unwrap();
    let ig = InfoGraph::build(&delay_matrix(&isolated(1)).unwrap());
    let ss = steady_state(&p, &ig, 1e-12, 10_000).unwrap();
    let cr = realize_steady(&p.with_horizon(1).unwrap(), &ig, &ss.gains()).unwrap();
    let report = stability_check(&cr);
    let expected = 1.0 - (5f64.sqrt() - 1.0) / 2.0;
    assert!((report.lifted_radius - (1.0 - 1.0 / ((1.0 + 5f64.sqrt()) / 2.0))).abs() < 1e-9);
    assert!((report.lifted_radius - expected).abs() < 1e-9);
    assert!(report.stable());
}

#[test]
fn example8_steady_state_is_stable_and_matches_long_horizon() {
    let p = fixtures::example8_problem();
    let ig = InfoGraph::build(&delay_matrix(&fixtures::example8_graph()).unwrap());
    let ss = steady_state(&p, &ig, 1e-9, 10_000).unwrap();
    let (vs, ks) = finite_horizon(&p.with_horizon(200).unwrap(), &ig).unwrap();
    for r in 0..ig.len() {
        let scale = 1.0 + common::max_abs(&ss.x[r]);
        assert!(common::max_abs(&(&vs.x[0][r] - &ss.x[r])) <= 1e-7 * scale);
        assert!(common::max_abs(&(ks.gain(0, r) - &ss.k[r])) <= 1e-7 * (1.0 + common::max_abs(&ss.k[r])));
    }
    let cr = realize_steady(&p.with_horizon(1).unwrap(), &ig, &ss.gains()).unwrap();
    let report = stability_check(&cr);
    assert!(report.stable(), "{report:?}");
}

#[test]
fn zero_noise_rollout_costs_nothing() {
    let p = fixtures::example1_problem();
    let ig = InfoGraph::build(&delay_matrix(&fixtures::example1_graph()).unwrap());
    let (_, ks) = finite_horizon(&p, &ig).unwrap();
    let cr = realize(&p, &ig, &ks).unwrap();
    let traj = simulate(&cr, &p, &declqr::Disturbances::zeros(3, 3)).unwrap();
    assert_eq!(traj.cost(), 0.0);
    assert!(traj.u.iter().all(|u| u.iter().all(|&v| v == 0.0)));
}

#[test]
fn gain_schedule_shape_matches_info_graph() {
    let p = fixtures::example1_problem();
    let ig = InfoGraph::build(&delay_matrix(&fixtures::example1_graph()).unwrap());
    let bad = GainSchedule { k: vec![vec![DMatrix::zeros(1, 1); ig.len()]; 3] };
    assert!(realize(&p, &ig, &bad).is_err());
}
