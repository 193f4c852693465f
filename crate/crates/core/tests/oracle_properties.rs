use nalgebra::DVector;
use proptest::prelude::*;
use ssac::actor_critic::{run, AcConfig};
use ssac::critic::FeatureMatrix;
use ssac::linalg;
use ssac::mdp::{FiniteMdp, RandomMdpSpec};
use ssac::oracle::{self, ThetaGridSpec};
use ssac::policy::SoftmaxPolicy;

fn setup(s: usize, a: usize, gamma: f64, seed: u64, theta_seed: u64) -> (FiniteMdp, SoftmaxPolicy) {
    let mdp = RandomMdpSpec::new(s, a, gamma, seed).generate().unwrap();
    let class = SoftmaxPolicy::tabular(s, a, 0.05).unwrap();
    let theta = ThetaGridSpec { count: 2, radius: 3.0, seed: theta_seed }.points(s * a).pop().unwrap();
    (mdp, class.with_theta(theta))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_quantities_satisfy_their_defining_equations(
        s in 1usize..6, a in 1usize..4, gamma in 0.05..0.98f64, seed in 0u64..10_000, ts in 0u64..10_000, k in 1usize..4,
    ) {
        let (mdp, pol) = setup(s, a, gamma, seed, ts);
        let features = FeatureMatrix::random(mdp.n_sa(), k.min(mdp.n_sa()), seed ^ 77).unwrap();
        let ev = oracle::evaluate(&mdp, &pol, &features).unwrap();

        // Bellman: Q = c + γ P_θ Q
        let bellman = &ev.q - mdp.cost() - &ev.sa_matrix * &ev.q * gamma;
        prop_assert!(bellman.amax() <= 1e-9, "Bellman residual {}", bellman.amax());
        // value range
        let vmax = mdp.c_max() / (1.0 - gamma);
        prop_assert!(ev.value.abs() <= vmax + 1e-12);
        // stationarity
        let rho = ev.rho.probs();
        let drift = (ev.sa_matrix.transpose() * rho - rho).abs().sum();
        prop_assert!(drift <= 1e-10, "ρ drift {drift}");
        // TD fixed point
        let res = (&ev.td.a_matrix * &ev.omega_theta - &ev.td.b_vector).norm();
        prop_assert!(res <= 1e-9, "fixed-point residual {res}");
        prop_assert!(linalg::spectral_norm(&ev.td.a_matrix) <= 2.0 + 1e-12);
    }

    #[test]
    fn tabular_margin_dominates_weighted_floor(
        s in 1usize..6, a in 1usize..4, gamma in 0.05..0.98f64, seed in 0u64..10_000, ts in 0u64..10_000,
    ) {
        let (mdp, pol) = setup(s, a, gamma, seed, ts);
        let ev = oracle::evaluate(&mdp, &pol, &FeatureMatrix::tabular(mdp.n_sa())).unwrap();
        let floor = (1.0 - gamma) * ev.rho.probs().min();
        prop_assert!(ev.margin >= floor - 1e-12, "margin {} < {floor}", ev.margin);
        prop_assert!(floor > 0.0);
    }

    #[test]
    fn critic_gradient_bias_is_bounded_by_tracking_and_approximation_error(
        s in 2usize..5, a in 2usize..4, gamma in 0.1..0.95f64, seed in 0u64..10_000, ts in 0u64..10_000,
        k in 1usize..4, scale in 0.0..5.0f64,
    ) {
        let (mdp, pol) = setup(s, a, gamma, seed, ts);
        let features = FeatureMatrix::random(mdp.n_sa(), k, seed + 1).unwrap();
        let ev = oracle::evaluate(&mdp, &pol, &features).unwrap();
        let omega = &ev.omega_theta + DVector::from_fn(k, |i, _| scale * ((i + 1) as f64).cos());
        let g = ev.critic_gradient(&features, &omega, gamma);
        let k_theta = ev.scores.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let bound = k_theta / (1.0 - gamma) * ((&omega - &ev.omega_theta).norm() + ev.delta);
        let gap = (g - &ev.gradient).norm();
        prop_assert!(gap <= bound + 1e-10, "||g − ∇V|| = {gap} > {bound}");
    }

    #[test]
    fn refining_the_grid_never_raises_mu_or_lowers_delta(seed in 0u64..10_000, n in 2usize..10) {
        let mdp = RandomMdpSpec::new(3, 2, 0.8, seed).generate().unwrap();
        let class = SoftmaxPolicy::tabular(3, 2, 0.05).unwrap();
        let features = FeatureMatrix::tabular_prefix(6, 3).unwrap();
        let coarse = ThetaGridSpec { count: n, radius: 2.0, seed }.points(6);
        let fine = ThetaGridSpec { count: 3 * n, radius: 2.0, seed }.points(6);
        prop_assert_eq!(&fine[..n], &coarse[..]);
        let pc = oracle::oracle_grid(&mdp, &class, &features, &coarse).unwrap();
        let pf = oracle::oracle_grid(&mdp, &class, &features, &fine).unwrap();
        prop_assert!(oracle::mu_estimate(&pf) <= oracle::mu_estimate(&pc));
        prop_assert!(oracle::delta_estimate(&pf) >= oracle::delta_estimate(&pc));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn critic_iterates_stay_in_the_ball(seed in 0u64..1000, radius in 0.05..3.0f64, c in 0.1..1.0f64) {
        let mdp = RandomMdpSpec::new(3, 2, 0.9, seed).generate().unwrap();
        let class = SoftmaxPolicy::tabular(3, 2, 0.05).unwrap();
        let mut cfg = AcConfig::new(400, c, radius);
        cfg.diag_stride = 1;
        cfg.sampler.seed = seed;
        let log = run(&mdp, &class, &FeatureMatrix::tabular(6), &cfg, "").unwrap();
        prop_assert_eq!(log.rows.len(), 400);
        for r in &log.rows {
            prop_assert!(r.omega_norm <= radius + 1e-12, "t = {}: ||ω|| = {}", r.t, r.omega_norm);
            prop_assert!(r.grad_sq >= 0.0 && r.delta_sq >= 0.0);
        }
        prop_assert!(log.meta.empirical_l_omega.is_finite());
    }
}
