//! Linearization around a state trajectory, the adjoint system solved by time
//! reversal, the tracking cost and its gradient.

use crate::error::{Error, Result};
use crate::linear::{assemble_rhs, assemble_step, solve_P, CoefficientQuintet, ForcingTriple, LinearTrajectory, LinearTriple};
use crate::mesh::{dot, GridFn, Mesh1D};
use crate::problem::{ControlTriple, GradientTriple, ProblemConfig, TauPolicy};
use crate::regularization::{fp, fpp};
use crate::state::{alpha_bar, cell_f, nodal_average, solve_state, StateTrajectory};

/// Coefficients of the sensitivity system along `traj`:
/// a = alpha0, b = 0, mu = g'(eta) + alpha''(eta) F, omega = alpha'(eta) f'(theta_x)
/// at both ends of each cell, A = abar f''(theta_x).
pub fn coeffs_from_state(cfg: &ProblemConfig, traj: &StateTrajectory) -> Result<CoefficientQuintet> {
    if cfg.eps.is_singular() {
        return Err(Error::SingularLimit("linearization of the state system"));
    }
    let e = cfg.eps.value();
    let mesh = &cfg.mesh;
    let m = &cfg.material;
    if traj.states.len() != cfg.grid.steps() + 1 {
        return Err(Error::Dimension("trajectory does not cover the time grid".into()));
    }
    let (mut a, mut b, mut mu, mut omega, mut big_a) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, s) in traj.states.iter().enumerate() {
        let t = cfg.grid.t(i);
        let eta = s.eta.bulk();
        let dx = crate::mesh::diff_x(mesh, &s.theta);
        let f = nodal_average(mesh, &cell_f(mesh, e, &s.theta));
        a.push(mesh.sample(|x| m.alpha0(t, x)));
        b.push(vec![0.0; mesh.n_nodes()]);
        mu.push(eta.iter().zip(&f).map(|(&h, &fj)| m.g_prime(h) + m.alpha_double_prime(h) * fj).collect());
        omega.push(
            dx.iter()
                .enumerate()
                .map(|(c, &d)| [m.alpha_prime(eta[c]) * fp(e, d), m.alpha_prime(eta[c + 1]) * fp(e, d)])
                .collect(),
        );
        big_a.push(alpha_bar(m, eta).iter().zip(&dx).map(|(ab, &d)| ab * fpp(e, d)).collect());
    }
    CoefficientQuintet::from_samples(mesh, &cfg.grid, a, b, mu, omega, big_a)
}

pub fn time_reverse<T: Clone>(seq: &[T]) -> Vec<T> {
    seq.iter().rev().cloned().collect()
}

/// Reversed step j of the adjoint pairs with forward node N + 1 - j; node 0
/// of the reversed sequence only carries the (zero) initial datum.
fn reverse_nodes<T: Clone>(seq: &[T]) -> Vec<T> {
    let n = seq.len() - 1;
    let mut out = vec![seq[n].clone()];
    out.extend(time_reverse(&seq[1..]));
    out
}

/// Quintet of the adjoint system: a and mu, omega, A reversed, b = -d_t alpha0 reversed.
pub fn adjoint_quintet(cfg: &ProblemConfig, traj: &StateTrajectory) -> Result<CoefficientQuintet> {
    let q = coeffs_from_state(cfg, traj)?;
    let mesh = &cfg.mesh;
    let b: Vec<GridFn> = cfg
        .grid
        .times()
        .iter()
        .map(|&t| mesh.sample(|x| -cfg.material.alpha0_dt(t, x)))
        .collect();
    CoefficientQuintet::from_samples(
        mesh,
        &cfg.grid,
        reverse_nodes(&q.a),
        reverse_nodes(&b),
        reverse_nodes(&q.mu),
        reverse_nodes(&q.omega),
        reverse_nodes(&q.big_a),
    )
}

/// Tracking residuals (K(eta - eta_ad), K_Gamma(eta_Gamma - eta_Gamma_ad), Lambda(theta - theta_ad)).
pub fn tracking_forcing(cfg: &ProblemConfig, traj: &StateTrajectory) -> ForcingTriple {
    let w = &cfg.weights;
    let tg = &cfg.targets;
    let mut f = ForcingTriple { h: vec![], h_gamma: vec![], k: vec![] };
    for (i, s) in traj.states.iter().enumerate() {
        let eta = s.eta.bulk();
        f.h.push(eta.iter().zip(&tg.eta_ad[i]).map(|(a, b)| w.k * (a - b)).collect());
        let bd = s.eta.boundary();
        f.h_gamma.push([w.k_gamma * (bd[0] - tg.eta_gamma_ad[i][0]), w.k_gamma * (bd[1] - tg.eta_gamma_ad[i][1])]);
        f.k.push(s.theta.iter().zip(&tg.theta_ad[i]).map(|(a, b)| w.lambda * (a - b)).collect());
    }
    f
}

fn reverse_forcing(f: &ForcingTriple) -> ForcingTriple {
    ForcingTriple { h: reverse_nodes(&f.h), h_gamma: reverse_nodes(&f.h_gamma), k: reverse_nodes(&f.k) }
}

/// Adjoint of the sensitivity operator applied to a forward-indexed forcing.
/// The result is indexed by forward time nodes and vanishes at t = T; node
/// i - 1 carries the multiplier of forward step i.
pub fn solve_adjoint_with(cfg: &ProblemConfig, traj: &StateTrajectory, forcing: &ForcingTriple) -> Result<LinearTrajectory> {
    forcing.check_shape(&cfg.mesh, &cfg.grid)?;
    let q = adjoint_quintet(cfg, traj)?;
    let init = LinearTriple::zeros(&cfg.mesh);
    let mut rev = solve_P(&cfg.mesh, &cfg.grid, &init, &q, &reverse_forcing(forcing), cfg.nu, cfg.solver.adjoint_tau_policy)?;
    rev.steps = time_reverse(&rev.steps);
    rev.info = time_reverse(&rev.info);
    Ok(rev)
}

pub fn solve_adjoint(cfg: &ProblemConfig, traj: &StateTrajectory) -> Result<LinearTrajectory> {
    solve_adjoint_with(cfg, traj, &tracking_forcing(cfg, traj))
}

/// Largest residual of the reversed step equations, tested against every
/// basis function.
pub fn adjoint_residual(
    cfg: &ProblemConfig,
    traj: &StateTrajectory,
    forcing: &ForcingTriple,
    adjoint: &LinearTrajectory,
) -> Result<f64> {
    let q = adjoint_quintet(cfg, traj)?;
    let rf = reverse_forcing(forcing);
    let rev = time_reverse(&adjoint.steps);
    let tau = cfg.grid.tau();
    let n = cfg.mesh.n_cells();
    let mut worst: f64 = 0.0;
    for j in 1..=cfg.grid.steps() {
        let c = q.step(j);
        let mat = assemble_step(&cfg.mesh, &c, tau, cfg.nu);
        let rhs = assemble_rhs(&cfg.mesh, &c, &rev[j - 1], &rf.h[j], rf.h_gamma[j], &rf.k[j], tau);
        let mut x = vec![0.0; 2 * n];
        for (k, v) in rev[j].p.bulk().iter().enumerate() {
            x[crate::linear::index_p(k)] = *v;
        }
        for k in 1..n {
            x[crate::linear::index_z(k)] = rev[j].z[k];
        }
        let r = mat.mat_vec(&x);
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in r.iter().zip(&rhs) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(worst)
}

/// Forward sensitivity along `traj` in the control direction `dir`.
pub fn solve_sensitivity(cfg: &ProblemConfig, traj: &StateTrajectory, dir: &ControlTriple) -> Result<LinearTrajectory> {
    dir.check_shape(&cfg.mesh, &cfg.grid)?;
    let q = coeffs_from_state(cfg, traj)?;
    let w = &cfg.weights;
    let scale = |s: &[f64], a: f64| s.iter().map(|v| a * v).collect::<Vec<_>>();
    let forcing = ForcingTriple {
        h: dir.u.iter().map(|u| scale(u, w.l)).collect(),
        h_gamma: dir.u_gamma.iter().map(|g| [w.l_gamma * g[0], w.l_gamma * g[1]]).collect(),
        k: dir.v.iter().map(|v| scale(v, w.m)).collect(),
    };
    solve_P(&cfg.mesh, &cfg.grid, &LinearTriple::zeros(&cfg.mesh), &q, &forcing, cfg.nu, TauPolicy::WarnOnly)
}

fn sq_h(mesh: &Mesh1D, a: &[f64], b: Option<&[f64]>) -> f64 {
    let d: Vec<f64> = match b {
        Some(b) => a.iter().zip(b).map(|(x, y)| x - y).collect(),
        None => a.to_vec(),
    };
    dot(&d, &mesh.mass_apply(&d))
}

/// Tracking cost with right-endpoint rectangles in time.
pub fn cost(cfg: &ProblemConfig, traj: &StateTrajectory, controls: &ControlTriple) -> f64 {
    let mesh = &cfg.mesh;
    let w = &cfg.weights;
    let tg = &cfg.targets;
    let mut j = 0.0;
    for i in 1..=cfg.grid.steps() {
        let s = &traj.states[i];
        let bd = s.eta.boundary();
        let ga = tg.eta_gamma_ad[i];
        let ug = controls.u_gamma[i];
        j += w.k * sq_h(mesh, s.eta.bulk(), Some(&tg.eta_ad[i]))
            + w.k_gamma * ((bd[0] - ga[0]).powi(2) + (bd[1] - ga[1]).powi(2))
            + w.lambda * sq_h(mesh, &s.theta, Some(&tg.theta_ad[i]))
            + w.l * sq_h(mesh, &controls.u[i], None)
            + w.l_gamma * (ug[0] * ug[0] + ug[1] * ug[1])
            + w.m * sq_h(mesh, &controls.v[i], None);
    }
    0.5 * cfg.grid.tau() * j
}

/// (L(u + p), L_Gamma(u_Gamma + p_Gamma), M(v + z)); control node i pairs
/// with adjoint node i - 1.
pub fn gradient(cfg: &ProblemConfig, adjoint: &LinearTrajectory, controls: &ControlTriple) -> Result<GradientTriple> {
    controls.check_shape(&cfg.mesh, &cfg.grid)?;
    if adjoint.steps.len() != controls.u.len() {
        return Err(Error::Dimension("adjoint and controls cover different time grids".into()));
    }
    let w = &cfg.weights;
    let mut g = ControlTriple::zeros(&cfg.mesh, &cfg.grid);
    for i in 1..controls.u.len() {
        let a = &adjoint.steps[i - 1];
        let (p, pg) = (a.p.bulk(), a.p.boundary());
        g.u[i] = controls.u[i].iter().zip(p).map(|(u, p)| w.l * (u + p)).collect();
        let ug = controls.u_gamma[i];
        g.u_gamma[i] = [w.l_gamma * (ug[0] + pg[0]), w.l_gamma * (ug[1] + pg[1])];
        g.v[i] = controls.v[i].iter().zip(a.z.iter()).map(|(v, z)| w.m * (v + z)).collect();
    }
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub state: StateTrajectory,
    pub cost: f64,
    pub adjoint: LinearTrajectory,
    pub gradient: GradientTriple,
}

/// State, cost, adjoint and gradient at `controls`.
pub fn evaluate(cfg: &ProblemConfig, controls: &ControlTriple) -> Result<Evaluation> {
    let state = solve_state(cfg, &cfg.init, controls)?;
    let cost = cost(cfg, &state, controls);
    let adjoint = solve_adjoint(cfg, &state)?;
    let gradient = gradient(cfg, &adjoint, controls)?;
    Ok(Evaluation { state, cost, adjoint, gradient })
}

fn pair_x(mesh: &Mesh1D, p: &LinearTriple, h: &[f64], hg: [f64; 2], k: &[f64]) -> f64 {
    let pb = p.p.boundary();
    dot(p.p.bulk(), &mesh.mass_apply(h)) + pb[0] * hg[0] + pb[1] * hg[1] + dot(&p.z, &mesh.mass_apply(k))
}

fn forcing_norm(mesh: &Mesh1D, f: &ForcingTriple, tau: f64) -> f64 {
    let mut s = 0.0;
    for i in 1..f.h.len() {
        s += sq_h(mesh, &f.h[i], None) + f.h_gamma[i][0].powi(2) + f.h_gamma[i][1].powi(2) + sq_h(mesh, &f.k[i], None);
    }
    (tau * s).sqrt()
}

/// Relative defect |(P* u, h) - (u, P h)| / (|u| |h|) between the adjoint and
/// the forward linearized solve.
pub fn conjugacy_check(cfg: &ProblemConfig, traj: &StateTrajectory, u: &ForcingTriple, h: &ForcingTriple) -> Result<f64> {
    let mesh = &cfg.mesh;
    let tau = cfg.grid.tau();
    let q = coeffs_from_state(cfg, traj)?;
    let fwd = solve_P(mesh, &cfg.grid, &LinearTriple::zeros(mesh), &q, h, cfg.nu, TauPolicy::WarnOnly)?;
    let adj = solve_adjoint_with(cfg, traj, u)?;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 1..=cfg.grid.steps() {
        lhs += pair_x(mesh, &adj.steps[i - 1], &h.h[i], h.h_gamma[i], &h.k[i]);
        rhs += pair_x(mesh, &fwd.steps[i], &u.h[i], u.h_gamma[i], &u.k[i]);
    }
    let denom = forcing_norm(mesh, u, tau) * forcing_norm(mesh, h, tau);
    Ok(if denom == 0.0 { 0.0 } else { tau * (lhs - rhs).abs() / denom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{builtin_default, builtin_varying_alpha0};
    use crate::mesh::{BulkBoundaryFn, GridFn0, TimeGrid};
    use crate::problem::{StateTriple, StepCoupling};
    use crate::regularization::Epsilon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_cfg(n: usize, steps: usize, model: crate::material::MaterialModel) -> ProblemConfig {
        let mut c = ProblemConfig::new(
            Mesh1D::new(n).unwrap(),
            TimeGrid::from_steps(0.25, steps).unwrap(),
            model,
            1.0,
            Epsilon::new(0.1).unwrap(),
        );
        c.init = StateTriple {
            eta: BulkBoundaryFn::from_bulk(c.mesh.sample(|x| 0.2 * (3.0 * x).cos())),
            theta: GridFn0::from_fn(&c.mesh, |x| (std::f64::consts::PI * x).sin()),
        };
        c.targets.eta_ad = vec![c.mesh.sample(|x| 0.1 * x); steps + 1];
        c.targets.theta_ad = vec![c.mesh.sample(|x| 0.5 * (std::f64::consts::PI * x).sin()); steps + 1];
        c.solver.coupling = StepCoupling::Converged;
        c
    }

    fn random_controls(c: &ProblemConfig, seed: u64) -> ControlTriple {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, d): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (g0, g1): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        ControlTriple::from_fns(
            &c.mesh,
            &c.grid,
            move |t, x| a * (2.0 * x + t).sin(),
            move |t| [g0 * (1.0 + t), g1 * (1.0 - t)],
            move |t, x| b * (3.0 * x).cos() + d * t,
        )
    }

    #[test]
    fn reversal_is_an_involution() {
        assert_eq!(time_reverse(&[1, 2, 3]), vec![3, 2, 1]);
        assert_eq!(time_reverse(&time_reverse(&[1.0, 4.0, 2.0])), vec![1.0, 4.0, 2.0]);
        assert_eq!(time_reverse(&[5; 4]), vec![5; 4]);
    }

    #[test]
    fn quintet_examples() {
        let mut c = smooth_cfg(8, 2, builtin_default());
        let zero = StateTrajectory {
            states: vec![StateTriple::zeros(&c.mesh); 3],
            energy: vec![],
            diagnostics: vec![],
            warnings: vec![],
            eps: c.eps,
            r: 0.0,
        };
        let q = coeffs_from_state(&c, &zero).unwrap();
        let e = c.eps.value();
        let f0 = e; // f_eps(0)
        for i in 0..3 {
            assert!(q.omega[i].iter().flatten().all(|&w| w == 0.0));
            // alpha(0) = 1.5, f''(0) = 1/eps
            assert!(q.big_a[i].iter().all(|&a| (a - 1.5 / e).abs() < 1e-12));
            // g'(0) = pi, alpha''(0) = 1
            assert!(q.mu[i].iter().all(|&m| (m - (std::f64::consts::PI + f0)).abs() < 1e-12));
        }
        c.eps = Epsilon::ZERO;
        assert!(matches!(coeffs_from_state(&c, &zero), Err(Error::SingularLimit(_))));
    }

    #[test]
    fn cost_examples() {
        let mut c = smooth_cfg(8, 4, builtin_default());
        c.targets = crate::problem::Targets::zeros(&c.mesh, &c.grid);
        c.init = StateTriple::zeros(&c.mesh);
        let zero_traj = StateTrajectory {
            states: vec![StateTriple::zeros(&c.mesh); 5],
            energy: vec![],
            diagnostics: vec![],
            warnings: vec![],
            eps: c.eps,
            r: 0.0,
        };
        let z = ControlTriple::zeros(&c.mesh, &c.grid);
        assert_eq!(cost(&c, &zero_traj, &z), 0.0);
        c.weights = crate::problem::Weights { k: 0.0, k_gamma: 0.0, lambda: 0.0, l: 2.0, l_gamma: 0.0, m: 0.0 };
        let ones = ControlTriple::from_fns(&c.mesh, &c.grid, |_, _| 1.0, |_| [0.0; 2], |_, _| 0.0);
        assert!((cost(&c, &zero_traj, &ones) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn zero_tracking_gives_zero_adjoint() {
        let mut c = smooth_cfg(8, 4, builtin_default());
        let ctrl = random_controls(&c, 1);
        let tr = solve_state(&c, &c.init.clone(), &ctrl).unwrap();
        c.targets.eta_ad = tr.states.iter().map(|s| s.eta.bulk().to_vec()).collect();
        c.targets.eta_gamma_ad = tr.states.iter().map(|s| s.eta.boundary()).collect();
        c.targets.theta_ad = tr.states.iter().map(|s| s.theta.to_vec()).collect();
        let adj = solve_adjoint(&c, &tr).unwrap();
        assert!(adj.steps.iter().all(|s| s.p.bulk().iter().chain(s.z.iter()).all(|v| *v == 0.0)));
        c.weights.l = 0.0;
        c.weights.l_gamma = 0.0;
        c.weights.m = 0.0;
        let g = gradient(&c, &adj, &ctrl).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn adjoint_terminal_and_residual() {
        let c = smooth_cfg(10, 6, builtin_varying_alpha0());
        let tr = solve_state(&c, &c.init.clone(), &random_controls(&c, 2)).unwrap();
        let f = tracking_forcing(&c, &tr);
        let adj = solve_adjoint_with(&c, &tr, &f).unwrap();
        let last = adj.steps.last().unwrap();
        assert!(last.p.bulk().iter().chain(last.z.iter()).all(|v| *v == 0.0));
        assert!(adj.steps[0].p.bulk().iter().any(|v| v.abs() > 1e-6));
        assert!(adjoint_residual(&c, &tr, &f, &adj).unwrap() < 1e-12);
    }

    #[test]
    fn sensitivity_matches_divided_difference() {
        let c = smooth_cfg(10, 6, builtin_default());
        let u = random_controls(&c, 3);
        let dir = random_controls(&c, 4);
        let base = solve_state(&c, &c.init.clone(), &u).unwrap();
        let sens = solve_sensitivity(&c, &base, &dir).unwrap();
        let mut errs = vec![];
        for d in [1e-2, 1e-3] {
            let pert = solve_state(&c, &c.init.clone(), &u.axpy(d, &dir)).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..base.states.len() {
                let (a, b, s) = (&pert.states[i], &base.states[i], &sens.steps[i]);
                for j in 0..=10 {
                    e = e.max(((a.eta.bulk()[j] - b.eta.bulk()[j]) / d - s.p.bulk()[j]).abs());
                    e = e.max(((a.theta[j] - b.theta[j]) / d - s.z[j]).abs());
                }
            }
            errs.push(e);
        }
        assert!(errs[1] < 0.2 * errs[0], "{errs:?}");
        let zero = solve_sensitivity(&c, &base, &ControlTriple::zeros(&c.mesh, &c.grid)).unwrap();
        assert!(zero.steps.iter().all(|s| s.p.bulk().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn gradient_matches_directional_difference() {
        let c = smooth_cfg(10, 8, builtin_default());
        let u = random_controls(&c, 5);
        let ev = evaluate(&c, &u).unwrap();
        for seed in 6..9 {
            let h = random_controls(&c, seed);
            let d = 1e-5;
            let jp = evaluate(&c, &u.axpy(d, &h)).unwrap().cost;
            let jm = evaluate(&c, &u.axpy(-d, &h)).unwrap().cost;
            let fd = (jp - jm) / (2.0 * d);
            let ad = ev.gradient.inner(&h, &c.mesh, c.grid.tau());
            assert!((fd - ad).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {ad}");
        }
    }

    #[test]
    fn conjugacy_exact_for_constant_alpha0() {
        let c = smooth_cfg(10, 6, builtin_default());
        let tr = solve_state(&c, &c.init.clone(), &random_controls(&c, 9)).unwrap();
        let mk = |s| {
            let ct = random_controls(&c, s);
            ForcingTriple { h: ct.u, h_gamma: ct.u_gamma, k: ct.v }
        };
        let r = conjugacy_check(&c, &tr, &mk(10), &mk(11)).unwrap();
        assert!(r < 1e-12, "{r}");
        let cv = smooth_cfg(10, 6, builtin_varying_alpha0());
        let tv = solve_state(&cv, &cv.init.clone(), &random_controls(&cv, 9)).unwrap();
        let rv = conjugacy_check(&cv, &tv, &mk(10), &mk(11)).unwrap();
        assert!(rv > 1e-8 && rv < 1e-1, "{rv}");
    }
}
