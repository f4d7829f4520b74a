mod common;

use fairway_core::network::linear_network;
use fairway_core::rng::stream;
use fairway_core::PfSolver;
use proptest::prelude::*;
use rand::Rng;

/// Warm starts along a slowly drifting path give the cold-start answer.
#[test]
fn warm_start_matches_cold_start() {
    let mut rng = stream(7, 0);
    for _ in 0..30 {
        let local = rng.random_bool(0.5);
        let net = common::random_network(&mut rng, 5, 8, local);
        let mut n = common::random_counts(&mut rng, net.routes());
        let mut warm = PfSolver::new(&net);
        let (mut lambda, mut q) = (vec![0.0; net.routes()], vec![0.0; net.resources()]);
        for _ in 0..50 {
            for v in &mut n {
                *v *= rng.random_range(0.9..1.1);
            }
            warm.solve_into(&n, &mut lambda, &mut q).unwrap();
            let cold = PfSolver::new(&net).solve(&n).unwrap();
            for (a, b) in lambda.iter().zip(&cold.lambda) {
                assert!((a - b).abs() <= 1e-8 * b.max(1.0), "warm {a} vs cold {b}");
            }
        }
    }
}

/// Random instances with some empty routes still satisfy the optimality
/// conditions, and the objective matches the gradient-projection oracle.
#[test]
fn sparse_counts_meet_kkt_and_oracle() {
    let mut rng = stream(8, 0);
    for _ in 0..40 {
        let net = common::random_network(&mut rng, 4, 7, false);
        let mut n = common::random_counts(&mut rng, net.routes());
        for v in &mut n {
            if rng.random_bool(0.3) {
                *v = 0.0;
            }
        }
        if n.iter().all(|v| *v == 0.0) {
            n[0] = 1.0;
        }
        let a = PfSolver::new(&net).solve(&n).unwrap();
        assert!(a.feasibility_violation(&net) <= 1e-9);
        assert!(a.slackness_residual(&net) <= 1e-8);
        let oracle = common::pg_oracle(&net, &n, 3, &mut rng);
        assert!(a.objective >= oracle - 1e-6 * oracle.abs().max(1.0), "ours {} oracle {oracle}", a.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    /// On a linear motorway every occupied route gets `n_i / d_i` with
    /// `d = A′q`.
    #[test]
    fn linear_allocation_is_pf(
        steps in prop::collection::vec(0.1f64..5.0, 1..6),
        raw in prop::collection::vec(0.0f64..100.0, 7),
    ) {
        // capacities must decrease downstream
        let c: Vec<f64> = (0..steps.len()).map(|j| steps[j..].iter().sum()).collect();
        let net = linear_network(&c).unwrap();
        let n: Vec<f64> = raw[..net.routes()].iter().map(|v| if *v < 20.0 { 0.0 } else { *v }).collect();
        prop_assume!(n.iter().any(|v| *v > 0.0));
        let a = PfSolver::new(&net).solve(&n).unwrap();
        prop_assert!(a.feasibility_violation(&net) <= 1e-9);
        let d = net.route_sum(&a.q);
        for i in 0..net.routes() {
            if n[i] > 0.0 {
                prop_assert!((a.lambda[i] * d[i] - n[i]).abs() <= 1e-8 * n[i]);
            }
        }
    }
}
