//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use csma_aoi::experiments::{self, DensityConfig};
use csma_aoi::optimizer::{self, OptimizerInputs};
use csma_aoi::sim::{self, Mac, SimScenario};
use csma_aoi::{csma, round_robin, shs, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn closed_form_matches_shs() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let p = NetworkParams::from_rates(
            &uniform_vec(&mut rng, n, 0.1, 20.0),
            &uniform_vec(&mut rng, n, 0.1, 20.0),
            &uniform_vec(&mut rng, n, 0.1, 20.0),
        )
        .unwrap();
        let pi_closed = csma::stationary_closed_form(&p).unwrap();
        for link in 0..n {
            let model = csma::build_shs_for_link(&p, link).unwrap();
            let (pi, v) = model.solve().unwrap();
            let numeric = shs::average_age(&v, 0).unwrap();
            worst = worst.max(rel(csma::per_link_age(&p, link).unwrap(), numeric));
            for (a, b) in pi_closed.probs.iter().zip(&pi.probs) {
                worst = worst.max(rel(*a, *b));
            }
        }
    }
    let t = start.elapsed();
    check(
        worst <= 1e-8 && within(t, 5.0),
        format!("max relative error {worst:.2e} over 200 instances, {:.2}s", t.as_secs_f64()),
    )
}

fn two_link_optimum() -> Outcome {
    let start = Instant::now();
    let r_ub = optimizer::r_upper_bound(16, 0.009).unwrap();
    let inputs = OptimizerInputs::new(vec![1.0, 5.0], r_ub).unwrap();
    let a = optimizer::optimize_backoff(&inputs, 0.009, &[1.0, 1.0]).unwrap();
    let t = start.elapsed();
    let r = &a.backoff_rates;
    let pass = (r[0] - 5.16).abs() <= 0.05
        && (r[1] - 14.8).abs() <= 0.05
        && (a.achieved_total_age - 4.44).abs() <= 0.01
        && within(t, 1.0);
    check(
        pass,
        format!(
            "R* = ({:.4}, {:.4}), age {:.4}, {:.3}s",
            r[0],
            r[1],
            a.achieved_total_age,
            t.as_secs_f64()
        ),
    )
}

fn kkt_matches_brute_force() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let h = uniform_vec(&mut rng, n, 0.1, 20.0);
        let r_ub = rng.random_range(1.0..=100.0);
        let inputs = OptimizerInputs::new(h.clone(), r_ub).unwrap();
        let kkt = optimizer::solve_kkt(&inputs).unwrap();
        let brute = optimizer::solve_brute(&inputs, 1e-3).unwrap();
        let a = optimizer::backoff_objective(&h, &kkt.backoff_rates());
        let b = optimizer::backoff_objective(&h, &brute);
        worst = worst.max(rel(a, b));
    }
    let t = start.elapsed();
    check(
        worst <= 1e-3 && within(t, 60.0),
        format!("max relative objective gap {worst:.2e} over 50 instances, {:.2}s", t.as_secs_f64()),
    )
}

fn symmetric_saturation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut not_saturated = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=10);
        let h = rng.random_range(0.1..=20.0);
        let r_ub = rng.random_range(0.1..=1000.0);
        let inputs = OptimizerInputs::new(vec![h; n], r_ub).unwrap();
        let sol = optimizer::solve_kkt(&inputs).unwrap();
        if !sol.saturated || sol.backoff_rates().iter().any(|&r| r != r_ub) {
            not_saturated += 1;
        }
    }
    let mut nonpositive = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=20u32);
        let h = rng.random_range(0.1..=20.0);
        let r = rng.random_range(0.1..=1000.0);
        if optimizer::saturation_polynomial(n, h, r) <= 0.0 {
            nonpositive += 1;
        }
    }
    let t = start.elapsed();
    check(
        not_saturated == 0 && nonpositive == 0 && within(t, 5.0),
        format!(
            "{not_saturated} unsaturated symmetric instances, {nonpositive} nonpositive polynomial values, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn arrival_rates_only_shift_age() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut changed = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let h = uniform_vec(&mut rng, n, 0.1, 20.0);
        let lam = uniform_vec(&mut rng, n, 0.1, 20.0);
        let lam2 = uniform_vec(&mut rng, n, 0.1, 20.0);
        let r_ub = rng.random_range(1.0..=200.0);
        let inputs = OptimizerInputs::new(h, r_ub).unwrap();
        let a = optimizer::optimize_backoff(&inputs, 0.009, &lam).unwrap();
        let b = optimizer::optimize_backoff(&inputs, 0.009, &lam2).unwrap();
        let same = a
            .backoff_rates
            .iter()
            .zip(&b.backoff_rates)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            changed += 1;
        }
        let expected: f64 = lam.iter().zip(&lam2).map(|(l, m)| 1.0 / l - 1.0 / m).sum();
        worst = worst.max((a.achieved_total_age - b.achieved_total_age - expected).abs());
    }
    check(
        changed == 0 && worst <= 1e-9,
        format!("{changed} instances with changed R*, max age-shift error {worst:.2e}"),
    )
}

fn idealized_simulation_matches() -> Outcome {
    use rayon::prelude::*;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let scenarios: Vec<SimScenario> = (0..20)
        .map(|i| {
            let n = rng.random_range(1..=4);
            let p = NetworkParams::from_rates(
                &uniform_vec(&mut rng, n, 0.2, 10.0),
                &uniform_vec(&mut rng, n, 0.2, 10.0),
                &uniform_vec(&mut rng, n, 0.2, 10.0),
            )
            .unwrap();
            SimScenario::new(p, Mac::Idealized, 1e6, 6000 + i)
        })
        .collect();
    let errors: Vec<(f64, f64)> = scenarios
        .par_iter()
        .map(|s| {
            let r = sim::simulate(s).unwrap();
            let closed = csma::total_age(&s.params).unwrap();
            let busy = 1.0 - 1.0 / closed.normalization;
            (rel(r.total_age, closed.total), (r.busy_fraction - busy).abs())
        })
        .collect();
    let t = start.elapsed();
    let age_err = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let busy_err = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    check(
        age_err <= 0.02 && busy_err <= 0.01 && within(t, 120.0),
        format!(
            "max age error {:.2}%, max busy-fraction error {busy_err:.4}, {:.1}s",
            100.0 * age_err,
            t.as_secs_f64()
        ),
    )
}

fn csma_against_round_robin() -> Outcome {
    let opt = |h: &[f64]| {
        let inputs = OptimizerInputs::new(h.to_vec(), 1e3).unwrap();
        optimizer::optimize_backoff(&inputs, 0.009, &[1.0, 1.0])
            .unwrap()
            .achieved_total_age
    };
    let sym_h = [1.0, 1.0];
    let asym_h = [0.1, 10.0];
    let csma_sym = opt(&sym_h);
    let csma_asym = opt(&asym_h);

    let mut rr = Vec::new();
    for (h, seed) in [(&sym_h, 71), (&asym_h, 72)] {
        let p = NetworkParams::from_rates(&[1.0, 1.0], h, &[0.0, 0.0]).unwrap();
        let oracle = round_robin::total_age(&p).unwrap();
        let s = SimScenario::new(p, Mac::RoundRobin { order: vec![0, 1] }, 1e6, seed);
        let simulated = sim::simulate(&s).unwrap().total_age;
        rr.push((oracle, simulated));
    }
    let rr_err = rr.iter().map(|(o, s)| rel(*s, *o)).fold(0.0, f64::max);
    let pass = (csma_sym - 6.0).abs() <= 0.1
        && (csma_asym - 20.5).abs() <= 0.3
        && rr_err <= 0.02
        && rr[0].1 < csma_sym
        && csma_asym < rr[1].1;
    check(
        pass,
        format!(
            "CSMA {csma_sym:.3} / {csma_asym:.3}, RR oracle {:.3} / {:.3}, RR sim {:.3} / {:.3} (max error {:.2}%)",
            rr[0].0,
            rr[1].0,
            rr[0].1,
            rr[1].1,
            100.0 * rr_err
        ),
    )
}

fn density_gap() -> Outcome {
    let cfg = DensityConfig {
        seeds: 10,
        ..DensityConfig::default()
    };
    let rows = experiments::density(&cfg).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap_percent).collect();
    let monotone = gaps.windows(2).all(|w| w[1] >= w[0]);
    let bounded = rows
        .iter()
        .find(|r| r.nodes == 8)
        .is_some_and(|r| r.gap_percent <= 15.0);
    let listing = rows
        .iter()
        .map(|r| format!("N={} {:+.1}% (W0={})", r.nodes, r.gap_percent, r.best_w0))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        monotone && bounded,
        format!("{listing}; non-decreasing: {monotone}, <=15% at N=8: {bounded}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 closed form vs SHS solver", closed_form_matches_shs),
        ("2 two-link optimum", two_link_optimum),
        ("3 KKT vs brute force", kkt_matches_brute_force),
        ("4 symmetric saturation and polynomial", symmetric_saturation),
        ("5 arrival-rate independence", arrival_rates_only_shift_age),
        ("6 idealized simulation", idealized_simulation_matches),
        ("7 CSMA vs Round Robin", csma_against_round_robin),
        ("8 slotted vs idealized gap", density_gap),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{name}] {}", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
