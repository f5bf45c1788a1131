//! Randomized invariants over the public API.

use baryprox::flows::{df_dt_analytic, integrate_flow, FlowConfig, FlowKind};
use baryprox::landscape::{metric, riemannian_hessian, LandscapePoint};
use baryprox::objectives::{finite_diff_check, ObjectiveFamily};
use baryprox::ppa::{run_ppa, PpaConfig, PpaStatus};
use baryprox::prox::{bfne_gap, prox, resolvent_residual, ProxConfig};
use baryprox::sampling::{
    planted_quadratic, random_hybrid, random_quadratic, random_softplus, random_x,
};
use baryprox::simplex::{hybrid_bregman, LogitVector};
use baryprox::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn landscape_point(r: &mut ChaCha8Rng, m: usize, s: usize) -> LandscapePoint {
    LandscapePoint::from_hybrid(&random_hybrid(r, m, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prox_meets_its_residual_contract(seed in any::<u64>(), m in 1usize..4, s in 2usize..5, lambda in 0.1f64..2.0) {
        let mut r = rng(seed);
        let fam = random_quadratic(&mut r, m, s, true);
        let p = random_hybrid(&mut r, m, s);
        let cfg = ProxConfig::with_lambda(lambda);
        let out = prox(&fam, &p.x, &p.q, &cfg).unwrap();
        prop_assert!(out.residual.max() <= cfg.inner_tol);
        prop_assert!(resolvent_residual(&fam, &p.x, &p.q, &out, &cfg).unwrap() <= 1e-8);
        let qp = out.q_prime.probabilities();
        prop_assert!((qp.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(qp.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn prox_is_bregman_firmly_nonexpansive(seed in any::<u64>(), m in 1usize..4, s in 2usize..5) {
        let mut r = rng(seed);
        let fam = random_softplus(&mut r, m, s);
        let u = random_hybrid(&mut r, m, s);
        let v = random_hybrid(&mut r, m, s);
        let gap = bfne_gap(&fam, &u, &v, &ProxConfig::with_lambda(0.7)).unwrap();
        prop_assert!(gap.gap >= -1e-8 * (1.0 + gap.rhs.abs()), "{:?}", gap);
    }

    #[test]
    fn ppa_steps_are_nonnegative_and_converge_below_stop_tol(seed in any::<u64>(), m in 2usize..4) {
        let mut r = rng(seed);
        let (fam, star) = planted_quadratic(&mut r, m, 2);
        let init = random_hybrid(&mut r, m, 2);
        let cfg = PpaConfig { stop_tol: 1e-18, ..PpaConfig::default() };
        let trace = run_ppa(&fam, &init, &cfg).unwrap();
        prop_assert!(trace.records.iter().all(|rec| rec.step_bregman >= 0.0));
        prop_assert_eq!(&trace.status, &PpaStatus::Converged);
        prop_assert!(trace.records.last().unwrap().step_bregman <= cfg.stop_tol);
        prop_assert!(hybrid_bregman(&star, &trace.final_point).unwrap() <= 1e-10);
    }

    #[test]
    fn hessians_share_x_blocks_and_metric_is_block_diagonal(seed in any::<u64>(), m in 1usize..4, s in 2usize..5) {
        let mut r = rng(seed);
        let fam = random_quadratic(&mut r, m, s, true);
        let p = landscape_point(&mut r, m, s);
        let rep = riemannian_hessian(&fam, &p).unwrap();
        let n = m + s - 1;
        for i in 0..m {
            for j in 0..n {
                prop_assert!((rep.euclidean[(i, j)] - rep.riemannian[(i, j)]).abs() <= 1e-12);
            }
        }
        let g = metric(&p);
        for i in 0..n {
            for j in 0..n {
                let expect_zero = (i < m) != (j < m) || (i < m && i != j);
                if expect_zero {
                    prop_assert_eq!(g[(i, j)], 0.0);
                } else if i < m {
                    prop_assert_eq!(g[(i, j)], 1.0);
                }
            }
        }
        prop_assert_eq!(rep.inertia.positive + rep.inertia.negative + rep.inertia.zero, n);
    }

    #[test]
    fn flow_records_stay_on_the_simplex(seed in any::<u64>(), s in 2usize..5, min_max in any::<bool>()) {
        let mut r = rng(seed);
        let fam = random_quadratic(&mut r, 2, s, true);
        let init = landscape_point(&mut r, 2, s);
        let kind = if min_max { FlowKind::MinMax } else { FlowKind::MinMin };
        let cfg = FlowConfig { t_end: 2.0, dt: 0.01, record_every: 5, ..FlowConfig::new(kind) };
        let trace = integrate_flow(&fam, &init, &cfg).unwrap();
        for rec in &trace.records {
            let q = rec.q.probabilities();
            prop_assert!((q.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(q.iter().all(|v| *v > 0.0));
        }
        if !min_max {
            for w in trace.records.windows(2) {
                prop_assert!(w[1].objective <= w[0].objective + 1e-12);
            }
        }
    }

    #[test]
    fn min_min_rate_never_exceeds_min_max_rate(seed in any::<u64>(), s in 2usize..5) {
        let mut r = rng(seed);
        let fam = random_quadratic(&mut r, 2, s, false);
        let p = landscape_point(&mut r, 2, s);
        let down = df_dt_analytic(&fam, &p.x, &p.xi_bar, FlowKind::MinMin).unwrap();
        let up = df_dt_analytic(&fam, &p.x, &p.xi_bar, FlowKind::MinMax).unwrap();
        prop_assert!(down <= 1e-14);
        prop_assert!(down <= up + 1e-12);
    }

    #[test]
    fn softplus_derivatives_match_finite_differences(seed in any::<u64>(), m in 1usize..4, s in 2usize..5) {
        let mut r = rng(seed);
        let fam = random_softplus(&mut r, m, s);
        let pts: Vec<DVector<f64>> = (0..4).map(|_| random_x(&mut r, m, 2.0)).collect();
        let report = finite_diff_check(&fam, &pts);
        prop_assert!(!report.any_flagged(), "{:?}", report);
        prop_assert!(fam.hessians(&pts[0]).is_some());
    }
}

#[test]
fn zero_logits_round_trip_to_uniform_weights() {
    let q = LogitVector::zeros(4).to_simplex().probabilities();
    assert!(q.iter().all(|v| (v - 0.25).abs() <= 1e-15));
}
