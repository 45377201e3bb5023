use csma_aoi::optimizer::{self, OptimizerInputs};
use csma_aoi::sim::{self, Mac, SimScenario};
use csma_aoi::{csma, round_robin, shs, NetworkParams};
use proptest::prelude::*;

fn rates(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..20.0, n)
}

fn network() -> impl Strategy<Value = NetworkParams> {
    (1usize..=5)
        .prop_flat_map(|n| (rates(n), rates(n), rates(n)))
        .prop_map(|(l, h, r)| NetworkParams::from_rates(&l, &h, &r).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_equals_hybrid_solution(p in network()) {
        for link in 0..p.num_links() {
            let (_, v) = csma::build_shs_for_link(&p, link).unwrap().solve().unwrap();
            let numeric = shs::average_age(&v, 0).unwrap();
            prop_assert!(rel(csma::per_link_age(&p, link).unwrap(), numeric) < 1e-8);
        }
    }

    #[test]
    fn stationary_ratios_follow_rates(p in network()) {
        let pi = csma::stationary_closed_form(&p).unwrap();
        let (solved, _) = csma::build_shs_for_link(&p, 0).unwrap().solve().unwrap();
        for (k, link) in p.links.iter().enumerate() {
            let ratio = solved.probs[k + 1] / solved.probs[0];
            prop_assert!(rel(ratio, link.backoff_rate / link.holding_rate) < 1e-9);
            prop_assert!(rel(pi.probs[k + 1], solved.probs[k + 1]) < 1e-9);
        }
        prop_assert!((solved.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_scaling_scales_age(p in network(), c in 0.1f64..10.0) {
        // multiplying every rate by c divides every age by c
        let scaled = NetworkParams::from_rates(
            &p.links.iter().map(|l| c * l.arrival_rate).collect::<Vec<_>>(),
            &p.links.iter().map(|l| c * l.holding_rate).collect::<Vec<_>>(),
            &p.links.iter().map(|l| c * l.backoff_rate).collect::<Vec<_>>(),
        ).unwrap();
        let a = csma::total_age(&p).unwrap().total;
        let b = csma::total_age(&scaled).unwrap().total;
        prop_assert!(rel(c * b, a) < 1e-12);
    }

    #[test]
    fn arrival_rate_enters_additively(p in network(), l2 in 0.1f64..20.0) {
        let mut q = p.clone();
        q.links[0].arrival_rate = l2;
        let a = csma::per_link_age(&p, 0).unwrap();
        let b = csma::per_link_age(&q, 0).unwrap();
        let expected = 1.0 / p.links[0].arrival_rate - 1.0 / l2;
        prop_assert!((a - b - expected).abs() < 1e-9 * a.max(1.0));
        for k in 1..p.num_links() {
            prop_assert_eq!(csma::per_link_age(&p, k).unwrap(), csma::per_link_age(&q, k).unwrap());
        }
    }

    #[test]
    fn round_robin_closed_form_equals_hybrid_solution(p in network()) {
        let closed = round_robin::per_link_ages(&p).unwrap();
        for (link, c) in closed.iter().enumerate() {
            let (_, v) = round_robin::build_shs_for_link(&p, link).unwrap().solve().unwrap();
            prop_assert!(rel(*c, shs::average_age(&v, 0).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn saturation_polynomial_positive(n in 1u32..50, h in 0.01f64..100.0, r in 0.01f64..1e4) {
        prop_assert!(optimizer::saturation_polynomial(n, h, r) > 0.0);
    }

    #[test]
    fn symmetric_networks_saturate(n in 1usize..12, h in 0.05f64..50.0, r_ub in 0.05f64..5000.0) {
        let inputs = OptimizerInputs::new(vec![h; n], r_ub).unwrap();
        let sol = optimizer::solve_kkt(&inputs).unwrap();
        prop_assert!(optimizer::check_saturated(&inputs).saturated);
        prop_assert!(sol.backoff_rates().iter().all(|&r| r == r_ub));
    }

    #[test]
    fn slower_links_back_off_less(h in rates(4), r_ub in 1.0f64..500.0) {
        let inputs = OptimizerInputs::new(h.clone(), r_ub).unwrap();
        let r = optimizer::solve_kkt(&inputs).unwrap().backoff_rates();
        for i in 0..h.len() {
            for j in 0..h.len() {
                if h[i] < h[j] {
                    prop_assert!(r[i] <= r[j] * (1.0 + 1e-9), "H={h:?} R={r:?}");
                }
            }
        }
    }

    #[test]
    fn kkt_conditions_hold(n in 1usize..=6, seed_h in rates(6), r_ub in 0.5f64..2000.0) {
        let inputs = OptimizerInputs::new(seed_h[..n].to_vec(), r_ub).unwrap();
        let sol = optimizer::solve_kkt(&inputs).unwrap();
        let res = sol.residuals(&inputs);
        prop_assert!(res.stationarity_f <= 1e-7, "{res:?}");
        prop_assert!(res.stationarity_eps <= 1e-7, "{res:?}");
        prop_assert!(res.complementary <= 1e-8, "{res:?}");
        prop_assert!(res.equality <= 1e-9, "{res:?}");
        prop_assert!(res.primal <= 1e-12, "{res:?}");
        prop_assert_eq!(res.dual, 0.0);
    }

    #[test]
    fn optimum_beats_feasible_points(h in rates(3), r_ub in 1.0f64..200.0, frac in prop::collection::vec(0.01f64..1.0, 3)) {
        let inputs = OptimizerInputs::new(h.clone(), r_ub).unwrap();
        let best = optimizer::backoff_objective(&h, &optimizer::solve_kkt(&inputs).unwrap().backoff_rates());
        let other: Vec<f64> = frac.iter().map(|f| f * r_ub).collect();
        prop_assert!(best <= optimizer::backoff_objective(&h, &other) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn idealized_busy_fraction(p in network(), seed in any::<u64>()) {
        let expected = 1.0 - 1.0 / p.normalization();
        let r = sim::simulate(&SimScenario::new(p, Mac::Idealized, 2e5, seed)).unwrap();
        prop_assert!((r.busy_fraction - expected).abs() < 0.01, "{} vs {expected}", r.busy_fraction);
    }
}

#[test]
fn slotted_occupancy_converges_with_window() {
    // busy fraction approaches 1 - 1/C and collisions vanish as windows grow
    let t_slot = 0.009;
    let h = [1.0, 5.0];
    let mut last_collision = f64::INFINITY;
    let mut last_busy_err = f64::INFINITY;
    for scale in [1u32, 4, 16] {
        let windows = vec![44 * scale, 16 * scale];
        let r: Vec<f64> = windows
            .iter()
            .map(|&w| 2.0 / ((w as f64 - 1.0) * t_slot))
            .collect();
        let p = NetworkParams::from_rates(&[1.0, 1.0], &h, &r).unwrap();
        let expected = 1.0 - 1.0 / p.normalization();
        let s = SimScenario::new(p, Mac::Slotted { t_slot, windows }, 2e5, 11);
        let res = sim::simulate(&s).unwrap();
        let collision = sim::estimate_collision_rate(&s).unwrap();
        let busy_err = (res.busy_fraction - expected).abs();
        assert!(busy_err < 0.01, "scale {scale}: {} vs {expected}", res.busy_fraction);
        assert!(collision < last_collision, "scale {scale}: {collision}");
        assert!(busy_err < last_busy_err + 0.002);
        last_collision = collision;
        last_busy_err = busy_err;
    }
    assert!(last_collision < 0.005);
}
