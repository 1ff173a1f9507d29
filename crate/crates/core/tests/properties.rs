use std::f64::consts::PI;

use proptest::prelude::*;

use kwc_core::adjoint::cost;
use kwc_core::benchmarks::{facet_benchmark, random_controls, smooth_benchmark};
use kwc_core::linear::{check_apriori, constants, FLOAT_SLACK};
use kwc_core::optimizer::{solve_op0, ContinuationSchedule, OptimizerConfig};
use kwc_core::verify::{random_linear_problem, run_suite, state_distance, SuiteOptions};
use kwc_core::{
    evaluate, solve_P, solve_state, step_theta, BulkBoundaryFn, ControlTriple, Epsilon, ForcingTriple, GridFn0,
    LinearTriple, StateTriple, TauPolicy, Weights,
};

fn small_cfg(eps: f64) -> kwc_core::ProblemConfig {
    smooth_benchmark(12, 10).unwrap().with_eps(Epsilon::new(eps).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn theta_step_is_stationary(a in -1.0..1.0f64, b in -1.0..1.0f64, k in 1.0..4.0f64, eps in 0.02..1.0f64) {
        let cfg = small_cfg(eps);
        let prev = StateTriple {
            eta: BulkBoundaryFn::from_bulk(cfg.mesh.sample(|x| a * (k * x).cos())),
            theta: GridFn0::from_fn(&cfg.mesh, |x| b * (PI * x).sin() + a * (2.0 * PI * x).sin()),
        };
        let v = cfg.mesh.sample(|x| b * x);
        let (theta, info) = step_theta(&cfg, &prev, &prev.eta, &v, cfg.grid.t(1), cfg.grid.tau()).unwrap();
        prop_assert!(info.newton.residual <= cfg.solver.newton_tol, "{}", info.newton.residual);
        prop_assert_eq!(theta[0], 0.0);
        prop_assert_eq!(theta[theta.len() - 1], 0.0);
    }

    #[test]
    fn unforced_energy_decays_per_step(a in -0.5..0.5f64, b in -1.0..1.0f64, eps in prop::sample::select(vec![0.0, 0.1, 1.0])) {
        let mut cfg = small_cfg(eps);
        cfg.init = StateTriple {
            eta: BulkBoundaryFn::from_bulk(cfg.mesh.sample(|x| a + 0.2 * (PI * x).cos())),
            theta: GridFn0::from_fn(&cfg.mesh, |x| b * (PI * x).sin()),
        };
        let tr = solve_state(&cfg, &cfg.init, &ControlTriple::zeros(&cfg.mesh, &cfg.grid)).unwrap();
        let tol = 10.0 * cfg.grid.tau().powi(2) * tr.energy[0].total().abs().max(1.0);
        for w in tr.energy.windows(2) {
            prop_assert!(w[1].total() <= w[0].total() + tol, "{} > {}", w[1].total(), w[0].total());
        }
    }

    #[test]
    fn linear_scheme_superposes(seed in 0u64..1000, c in -3.0..3.0f64) {
        let p = random_linear_problem(seed, 10, 12).unwrap();
        let q = random_linear_problem(seed + 1000, 10, 12).unwrap();
        let solve = |init: &LinearTriple, f: &ForcingTriple| {
            solve_P(&p.mesh, &p.grid, init, &p.quintet, f, p.nu, TauPolicy::WarnOnly).unwrap()
        };
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a + c * b).collect::<Vec<_>>();
        let init = LinearTriple {
            p: BulkBoundaryFn::from_bulk(comb(p.init.p.bulk(), q.init.p.bulk())),
            z: GridFn0::from_interior(&comb(p.init.z.interior(), q.init.z.interior())),
        };
        let forcing = p.forcing.axpy(c, &q.forcing);
        let (x, y, z) = (solve(&p.init, &p.forcing), solve(&q.init, &q.forcing), solve(&init, &forcing));
        for i in 0..x.steps.len() {
            let sp = comb(x.steps[i].p.bulk(), y.steps[i].p.bulk());
            let sz = comb(&x.steps[i].z, &y.steps[i].z);
            let scale = 1.0 + sp.iter().chain(&sz).fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in sp.iter().zip(z.steps[i].p.bulk()).chain(sz.iter().zip(z.steps[i].z.iter())) {
                prop_assert!((u - v).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn linear_scheme_respects_step_bounds(seed in 0u64..10_000) {
        let p = random_linear_problem(seed, 16, 24).unwrap();
        let tr = p.solve().unwrap();
        let rep = check_apriori(&p.mesh, &p.grid, &tr, &p.quintet, &p.forcing, &constants(&p.quintet, p.nu, p.grid.t_final()), p.nu);
        for i in rep.step_energy.iter().chain(&rep.step_increment) {
            prop_assert!(i.holds(FLOAT_SLACK), "{:?}", i);
        }
        prop_assert!(rep.integrated.holds(FLOAT_SLACK));
    }

    #[test]
    fn no_control_weights_means_zero_gradient(seed in 0u64..1000) {
        let mut cfg = small_cfg(0.1);
        cfg.weights = Weights { l: 0.0, l_gamma: 0.0, m: 0.0, ..Weights::ones() };
        let ev = evaluate(&cfg, &random_controls(&cfg, seed)).unwrap();
        prop_assert_eq!(ev.gradient.max_abs(), 0.0);
    }

    #[test]
    fn control_cost_is_quadratic(seed in 0u64..1000, d1 in 0.01..1.0f64, d2 in 0.01..1.0f64) {
        let mut cfg = small_cfg(0.1);
        cfg.weights = Weights { k: 0.0, k_gamma: 0.0, lambda: 0.0, ..Weights::ones() };
        let u = random_controls(&cfg, seed);
        let h = random_controls(&cfg, seed + 1);
        let tr = solve_state(&cfg, &cfg.init, &u).unwrap();
        let second = |d: f64| (cost(&cfg, &tr, &u.axpy(d, &h)) - 2.0 * cost(&cfg, &tr, &u) + cost(&cfg, &tr, &u.axpy(-d, &h))) / (d * d);
        let exact = h.norm(&cfg.mesh, cfg.grid.tau()).powi(2);
        prop_assert!((second(d1) - exact).abs() <= 1e-7 * exact.max(1.0));
        prop_assert!((second(d2) - exact).abs() <= 1e-7 * exact.max(1.0));
    }
}

#[test]
fn doubling_the_perturbation_about_doubles_the_difference() {
    let cfg = smooth_benchmark(24, 24).unwrap();
    let u = random_controls(&cfg, 2);
    let base = solve_state(&cfg, &cfg.init, &u).unwrap();
    let perturbed = |d: f64| {
        let x = cfg.mesh.nodes();
        let eta: Vec<f64> = cfg.init.eta.bulk().iter().zip(&x).map(|(e, x)| e + d * x * x).collect();
        let theta: Vec<f64> = cfg.init.theta.iter().zip(&x).map(|(t, x)| t + d * (2.0 * PI * x).sin()).collect();
        let init = StateTriple {
            eta: BulkBoundaryFn::from_bulk(eta),
            theta: GridFn0::from_interior(&theta[1..theta.len() - 1]),
        };
        state_distance(&cfg.mesh, &solve_state(&cfg, &init, &u).unwrap(), &base)
    };
    let (d1, d2) = (perturbed(1e-3), perturbed(2e-3));
    let ratio = d2 / d1;
    assert!(ratio > 1.8 && ratio < 2.2, "ratio {ratio}");
}

#[test]
fn warm_start_gap_within_mosco_scale() {
    let cfg = facet_benchmark(16, 10).unwrap();
    let schedule = ContinuationSchedule { opt: OptimizerConfig { max_iters: 10, ..Default::default() }, ..Default::default() };
    let r = solve_op0(&cfg, &ControlTriple::zeros(&cfg.mesh, &cfg.grid), &schedule).unwrap();
    assert!(r.certificate.nu_max_abs <= 1.0);
    for l in &r.levels[1..] {
        let (gap, scale) = (l.warm_start_gap.unwrap(), l.mosco_scale.unwrap());
        assert!(gap <= scale, "eps {}: gap {gap} scale {scale}", l.eps);
    }
}

#[test]
fn suite_is_deterministic() {
    let cfg = small_cfg(0.1);
    let u = random_controls(&cfg, 4);
    let opts = SuiteOptions { mosco_samples: 1000, gronwall_instances: 50, apriori_problems: 1, fd_directions: 2, ..Default::default() };
    let fmt = |rows: Vec<kwc_core::verify::VerifyRow>| format!("{rows:?}");
    assert_eq!(fmt(run_suite(&cfg, &u, 9, &opts)), fmt(run_suite(&cfg, &u, 9, &opts)));
}
