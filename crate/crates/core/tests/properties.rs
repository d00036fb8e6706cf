use proptest::prelude::*;

use tbrw_core::analysis::{classify_phase, Phase};
use tbrw_core::bmc::{eigen_check, eigen_truncation_level, generating_identity_check, mean_matrix_closed_form};
use tbrw_core::stats::two_sample_chi_square;
use tbrw_core::urn::run_until_kth_zero;
use tbrw_core::walker::{local_time_profile, run, Observers};
use tbrw_core::{ModelParams, OffspringDistribution, RngStream};

fn offspring() -> impl Strategy<Value = OffspringDistribution> {
    prop_oneof![
        (1u64..4).prop_map(|m| OffspringDistribution::point_mass(m).unwrap()),
        (0.05f64..0.95).prop_map(|p| OffspringDistribution::bernoulli(p).unwrap()),
        (0.3f64..0.9).prop_map(|q| OffspringDistribution::geometric(q).unwrap()),
        (0.1f64..3.0).prop_map(|mean| OffspringDistribution::poisson(mean).unwrap()),
    ]
}

fn nu_bar(p: &ModelParams) -> f64 {
    p.nu_bar().finite().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn walk_moves_by_one_edge(rho in 0.2f64..6.0, nu in offspring(), seed in any::<u64>()) {
        let params = ModelParams::new(rho, nu).unwrap();
        let obs = Observers { heights: true, tau: true, local_times: true, ..Default::default() };
        let trace = run(&params, 3000, &obs, &mut RngStream::new(seed, 0).rng());
        let h = trace.heights.as_ref().unwrap();
        prop_assert_eq!(h.len(), 3001);
        prop_assert_eq!(h[0], 0);
        let mut loops = Vec::new();
        for n in 1..h.len() {
            let d = h[n] as i64 - h[n - 1] as i64;
            prop_assert!(d.abs() == 1 || (d == 0 && h[n] == 0));
            if d == 0 {
                loops.push(n as u64);
            }
        }
        prop_assert_eq!(&loops, &trace.root_loop_times);
        prop_assert!(trace.tree_height >= *h.iter().max().unwrap());
        prop_assert_eq!(trace.final_height, h[3000]);
        for k in 1..=trace.root_loop_times.len().min(5) {
            let profile = local_time_profile(&trace, k).unwrap();
            prop_assert_eq!(profile.tau_k, k as u64 + 2 * profile.total());
        }
    }

    #[test]
    fn walks_are_reproducible(rho in 0.5f64..5.0, nu in offspring(), seed in any::<u64>(), stream in any::<u64>()) {
        let params = ModelParams::new(rho, nu).unwrap();
        let obs = Observers { heights: true, ..Default::default() };
        let a = run(&params, 500, &obs, &mut RngStream::new(seed, stream).rng());
        let b = run(&params, 500, &obs, &mut RngStream::new(seed, stream).rng());
        prop_assert_eq!(a.heights, b.heights);
        prop_assert_eq!(a.total_vertices, b.total_vertices);
    }

    #[test]
    fn urn_draws_account_for_every_step(extra in 0.1f64..4.0, nu in offspring(), k in 1usize..4, seed in any::<u64>()) {
        let mean = nu.mean().finite().unwrap();
        let params = ModelParams::new(mean + extra, nu).unwrap();
        let obs = run_until_kth_zero(&params, k, 1_000_000_000, &mut RngStream::new(seed, 0).rng()).unwrap();
        prop_assert_eq!(obs.y.iter().sum::<u64>() + k as u64, obs.theta_k);
        prop_assert_eq!(obs.y.len() as u64, obs.n_k);
        prop_assert_eq!(obs.n_history.len(), k);
        prop_assert!(obs.n_history.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*obs.n_history.last().unwrap(), obs.n_k);
    }

    #[test]
    fn mean_matrix_is_nonnegative(extra in 0.1f64..5.0, nu in offspring(), l in 1usize..30) {
        let mean = nu.mean().finite().unwrap();
        let params = ModelParams::new(mean + extra, nu).unwrap();
        let m = mean_matrix_closed_form(&params, l).unwrap();
        prop_assert!(m.entries.iter().all(|&x| x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn eigenvector_identity_holds(extra in 0.3f64..5.0, nu in offspring()) {
        let mean = nu.mean().finite().unwrap();
        let params = ModelParams::new(1.0 + mean + extra, nu).unwrap();
        let l = eigen_truncation_level(&params, 10, 1e-12).unwrap();
        prop_assume!(l <= 400);
        let check = eigen_check(&params, l, 10).unwrap();
        prop_assert!(check.residual < 1e-9, "L = {} residual {}", l, check.residual);
    }

    #[test]
    fn generating_identity_holds(extra in 0.3f64..5.0, nu in offspring(), frac in 0.05f64..0.9, k in 1usize..10) {
        let params = ModelParams::new(nu.mean().finite().unwrap() + extra, nu).unwrap();
        let s = frac * (params.rho() - nu_bar(&params)) / params.rho();
        let g = generating_identity_check(&params, k, s, None).unwrap();
        prop_assert!(g.relative_error < 1e-8, "{:?}", g);
    }

    #[test]
    fn phase_follows_the_critical_bias(rho in 0.1f64..10.0, nu in offspring()) {
        let params = ModelParams::new(rho, nu).unwrap();
        let critical = 1.0 + 2.0 * nu_bar(&params);
        prop_assume!((rho - critical).abs() > 1e-9);
        let expected = if rho < critical { Phase::Transient } else { Phase::PositiveRecurrent };
        prop_assert_eq!(classify_phase(&params), expected);
    }

    #[test]
    fn offspring_quantiles_invert_the_cdf(nu in offspring(), u in 0.0f64..1.0) {
        let k = nu.quantile(u);
        prop_assert!(nu.cdf(k) >= u);
        if k > 0 {
            prop_assert!(nu.cdf(k - 1) < u);
        }
    }

    #[test]
    fn params_round_trip_through_json(rho in 0.01f64..100.0, nu in offspring()) {
        let params = ModelParams::new(rho, nu).unwrap();
        let text = serde_json::to_string(&params).unwrap();
        prop_assert_eq!(serde_json::from_str::<ModelParams>(&text).unwrap(), params);
    }

    #[test]
    fn chi_square_is_a_probability(a in prop::collection::vec(0u64..500, 1..20), b in prop::collection::vec(0u64..500, 1..20)) {
        prop_assume!(a.iter().sum::<u64>() > 0 && b.iter().sum::<u64>() > 0);
        let r = two_sample_chi_square(&a, &b, None);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!(r.statistic >= 0.0);
        let same = two_sample_chi_square(&a, &a, None);
        prop_assert!(same.statistic.abs() < 1e-9);
    }
}
