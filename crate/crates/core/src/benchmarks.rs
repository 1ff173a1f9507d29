//! Reference problems used by the acceptance suite, the CLI and the benches.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linear::ForcingTriple;
use crate::material::builtin;
use crate::mesh::{BulkBoundaryFn, GridFn0, Mesh1D, TimeGrid};
use crate::problem::{ControlTriple, ProblemConfig, StateTriple, StepCoupling};
use crate::regularization::Epsilon;
use crate::state::solve_state;

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Smooth random control triple: a few low modes in x with linear time factors.
pub fn random_controls(cfg: &ProblemConfig, seed: u64) -> ControlTriple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = || -> [f64; 6] { std::array::from_fn(|_| rng.gen_range(-1.0..1.0)) };
    let (cu, cg, cv) = (coef(), coef(), coef());
    let tf = cfg.grid.t_final();
    let mut u = ControlTriple::from_fns(
        &cfg.mesh,
        &cfg.grid,
        move |t, x| {
            let s = t / tf;
            cu[0] + cu[1] * (PI * x).cos() + cu[2] * (2.0 * PI * x).sin() + s * (cu[3] + cu[4] * x + cu[5] * x * x)
        },
        move |t| {
            let s = t / tf;
            [cg[0] + cg[1] * s + cg[2] * s * s, cg[3] + cg[4] * s + cg[5] * s * s]
        },
        move |t, x| {
            let s = t / tf;
            cv[0] + cv[1] * (PI * x).sin() + cv[2] * (3.0 * x).cos() + s * (cv[3] + cv[4] * (2.0 * PI * x).cos() + cv[5] * x)
        },
    );
    u.u[0].fill(0.0);
    u.u_gamma[0] = [0.0; 2];
    u.v[0].fill(0.0);
    u
}

/// eps = 0.1 problem with a time-varying alpha0, smooth initial data and
/// targets.
pub fn smooth_benchmark(n_cells: usize, steps: usize) -> Result<ProblemConfig> {
    let material = builtin("varying_alpha0", &BTreeMap::new())?;
    let mesh = Mesh1D::new(n_cells)?;
    let grid = TimeGrid::from_steps(0.5, steps)?;
    let mut c = ProblemConfig::new(mesh, grid, material, 1.0, Epsilon::new(0.1)?);
    c.init = StateTriple {
        eta: BulkBoundaryFn::from_bulk(c.mesh.sample(|x| 0.3 * (PI * x).cos())),
        theta: GridFn0::from_fn(&c.mesh, |x| 0.8 * (PI * x).sin() + 0.2 * (2.0 * PI * x).sin()),
    };
    let times = c.grid.times();
    c.targets.eta_ad = times.iter().map(|&t| c.mesh.sample(|x| 0.2 * x * (1.0 + t))).collect();
    c.targets.eta_gamma_ad = times.iter().map(|&t| [0.1 * t, 0.2]).collect();
    c.targets.theta_ad = times.iter().map(|_| c.mesh.sample(|x| 0.5 * (PI * x).sin())).collect();
    Ok(c)
}

/// Control used to generate the inverse-crime targets.
pub fn inverse_crime_control(cfg: &ProblemConfig) -> ControlTriple {
    let mut u = ControlTriple::from_fns(
        &cfg.mesh,
        &cfg.grid,
        |_, x| 0.6 + 0.4 * (PI * x).cos(),
        |_| [0.3, -0.2],
        |_, x| 0.5 * (PI * x).sin(),
    );
    u.u[0].fill(0.0);
    u.u_gamma[0] = [0.0; 2];
    u.v[0].fill(0.0);
    u
}

/// Slow dynamics (weak double well) over a long horizon, with targets that
/// are the state of a known control; all weights 1.
pub fn inverse_crime(n_cells: usize, steps: usize, t_final: f64) -> Result<(ProblemConfig, ControlTriple)> {
    let material = builtin("default", &params(&[("g_scale", 0.05)]))?;
    let mut c = ProblemConfig::new(Mesh1D::new(n_cells)?, TimeGrid::from_steps(t_final, steps)?, material, 1.0, Epsilon::new(0.1)?);
    c.solver.coupling = StepCoupling::Converged;
    let truth = inverse_crime_control(&c);
    let tr = solve_state(&c, &c.init.clone(), &truth)?;
    c.targets.eta_ad = tr.states.iter().map(|s| s.eta.bulk().to_vec()).collect();
    c.targets.eta_gamma_ad = tr.states.iter().map(|s| s.eta.boundary()).collect();
    c.targets.theta_ad = tr.states.iter().map(|s| s.theta.to_vec()).collect();
    Ok((c, truth))
}

/// Orientation staircase: flat terraces joined by steep ramps, vanishing at
/// both ends.
pub fn staircase(x: f64) -> f64 {
    let ramp = |x: f64, c: f64| 0.5 * (1.0 + ((x - c) / 0.04).tanh());
    let s = ramp(x, 0.3) + ramp(x, 0.7) - 2.0 * ramp(x, 0.85);
    s - (1.0 - x) * (ramp(0.0, 0.3) + ramp(0.0, 0.7) - 2.0 * ramp(0.0, 0.85))
        - x * (ramp(1.0, 0.3) + ramp(1.0, 0.7) - 2.0 * ramp(1.0, 0.85))
}

/// Singular (eps = 0) problem started from a terraced orientation: the
/// terraces are facets from the start and merge until theta is flat.
pub fn facet_benchmark(n_cells: usize, steps: usize) -> Result<ProblemConfig> {
    let material = builtin("default", &params(&[("g_scale", 0.2)]))?;
    let mut c = ProblemConfig::new(Mesh1D::new(n_cells)?, TimeGrid::from_steps(0.5, steps)?, material, 0.5, Epsilon::ZERO);
    c.init = StateTriple {
        eta: BulkBoundaryFn::from_bulk(c.mesh.sample(|x| 0.2 * (PI * x).cos())),
        theta: GridFn0::from_fn(&c.mesh, staircase),
    };
    let times = c.grid.times();
    c.targets.eta_ad = times.iter().map(|_| c.mesh.sample(|x| 0.2 * (PI * x).cos())).collect();
    c.targets.eta_gamma_ad = times.iter().map(|_| [0.2, -0.2]).collect();
    c.targets.theta_ad = times.iter().map(|_| c.mesh.sample(staircase)).collect();
    c.solver.coupling = StepCoupling::Converged;
    Ok(c)
}

/// Random smooth forcing of the linearized system that vanishes at t = 0 and
/// t = T (envelope sin(pi t / T)).
pub fn compatible_forcing(cfg: &ProblemConfig, seed: u64) -> ForcingTriple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = || -> [f64; 4] { std::array::from_fn(|_| rng.gen_range(-1.0..1.0)) };
    let (ch, cg, ck) = (coef(), coef(), coef());
    let tf = cfg.grid.t_final();
    let times = cfg.grid.times();
    let env = |t: f64| (PI * t / tf).sin();
    let mesh = &cfg.mesh;
    ForcingTriple {
        h: times
            .iter()
            .map(|&t| mesh.sample(|x| env(t) * (ch[0] + ch[1] * (PI * x).cos() + ch[2] * (2.0 * PI * x + t).sin() + ch[3] * x)))
            .collect(),
        h_gamma: times.iter().map(|&t| [env(t) * (cg[0] + cg[1] * t), env(t) * (cg[2] + cg[3] * t)]).collect(),
        k: times
            .iter()
            .map(|&t| mesh.sample(|x| env(t) * (ck[0] * (PI * x).sin() + ck[1] * (3.0 * x - t).cos() + ck[2] + ck[3] * x * x)))
            .collect(),
    }
}
