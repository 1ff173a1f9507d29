//! The linear system (P): implicit Euler steps for (p, p_Gamma, z), the step
//! bound tau0, the estimate constants and the a-priori checks.

use serde::Serialize;

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::mesh::{
    diff_x, dot, grad_sq, norm_h, norm_v0_dual, norm_x_sq, BoundaryPair, BulkBoundaryFn, GridFn, GridFn0,
    Mesh1D, TimeGrid,
};
use crate::problem::TauPolicy;

/// Sampled norms entering tau0 and the constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuintetNorms {
    /// sup|a| + sup|a_t| + sup|a_x|
    pub a_w1inf: f64,
    /// inf a
    pub delta_star: f64,
    pub b_inf: f64,
    /// max over time nodes of |mu_i|_H
    pub mu_linf_h: f64,
    pub omega_inf: f64,
    pub big_a_inf: f64,
}

/// Coefficients (a, b, mu, omega, A) on time nodes 0..=N.
///
/// `a`, `b`, `mu` are nodal. `omega[i][c]` holds the values at the left and
/// right node of cell c (the coupling integrals use the trapezoid rule).
/// `big_a[i][c]` is cellwise.
#[derive(Clone, Debug)]
pub struct CoefficientQuintet {
    pub a: Vec<GridFn>,
    pub b: Vec<GridFn>,
    pub mu: Vec<GridFn>,
    pub omega: Vec<Vec<[f64; 2]>>,
    pub big_a: Vec<Vec<f64>>,
    pub norms: QuintetNorms,
}

#[derive(Clone, Copy, Debug)]
pub struct StepCoefficients<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub mu: &'a [f64],
    pub omega: &'a [[f64; 2]],
    pub big_a: &'a [f64],
}

impl CoefficientQuintet {
    pub fn from_samples(
        mesh: &Mesh1D,
        grid: &TimeGrid,
        a: Vec<GridFn>,
        b: Vec<GridFn>,
        mu: Vec<GridFn>,
        omega: Vec<Vec<[f64; 2]>>,
        big_a: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.steps() + 1;
        let nc = mesh.n_cells();
        if [a.len(), b.len(), mu.len(), omega.len(), big_a.len()].iter().any(|&l| l != n) {
            return Err(Error::Dimension(format!("coefficients need {n} time nodes")));
        }
        for i in 0..n {
            mesh.check_len(&a[i], "a")?;
            mesh.check_len(&b[i], "b")?;
            mesh.check_len(&mu[i], "mu")?;
            if omega[i].len() != nc || big_a[i].len() != nc {
                return Err(Error::Dimension(format!("omega and A need {nc} cell values")));
            }
        }
        let all = a.iter().chain(&b).chain(&mu).flatten().chain(big_a.iter().flatten());
        if !all.chain(omega.iter().flatten().flatten()).all(|v| v.is_finite()) {
            return Err(Error::Invalid("coefficients must be finite".into()));
        }
        let a_min = a.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v));
        if a_min <= 0.0 {
            return Err(Error::Invalid(format!("a must be bounded below by a positive constant, min a = {a_min}")));
        }
        let big_a_min = big_a.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v));
        if big_a_min < 0.0 {
            return Err(Error::Invalid(format!("A must be nonnegative, min A = {big_a_min}")));
        }
        let supabs = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |m, v| m.max(v.abs()));
        let a_sup = supabs(&mut a.iter().flatten().copied());
        let a_t = supabs(&mut a.windows(2).flat_map(|w| w[1].iter().zip(&w[0]).map(|(x, y)| (x - y) / grid.tau())));
        let a_x = supabs(&mut a.iter().flat_map(|ai| diff_x(mesh, ai)));
        let norms = QuintetNorms {
            a_w1inf: a_sup + a_t + a_x,
            delta_star: a_min,
            b_inf: supabs(&mut b.iter().flatten().copied()),
            mu_linf_h: mu.iter().map(|m| norm_h(mesh, m)).fold(0.0, f64::max),
            omega_inf: supabs(&mut omega.iter().flatten().flatten().copied()),
            big_a_inf: supabs(&mut big_a.iter().flatten().copied()),
        };
        Ok(Self { a, b, mu, omega, big_a, norms })
    }

    /// Sample space-time functions: a, b, omega, A at t_i, mu as the time
    /// average over (t_{i-1}, t_i) by 2-point Gauss.
    pub fn from_fns(
        mesh: &Mesh1D,
        grid: &TimeGrid,
        a: impl Fn(f64, f64) -> f64,
        b: impl Fn(f64, f64) -> f64,
        mu: impl Fn(f64, f64) -> f64,
        omega: impl Fn(f64, f64) -> f64,
        big_a: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let times = grid.times();
        let tau = grid.tau();
        let g = 0.5 / 3f64.sqrt();
        let mids = mesh.midpoints();
        let av = times.iter().map(|&t| mesh.sample(|x| a(t, x))).collect();
        let bv = times.iter().map(|&t| mesh.sample(|x| b(t, x))).collect();
        let muv = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == 0 {
                    mesh.sample(|x| mu(t, x))
                } else {
                    let c = t - 0.5 * tau;
                    mesh.sample(|x| 0.5 * (mu(c - g * tau, x) + mu(c + g * tau, x)))
                }
            })
            .collect();
        let om = times
            .iter()
            .map(|&t| (0..mesh.n_cells()).map(|c| [omega(t, mesh.x(c)), omega(t, mesh.x(c + 1))]).collect())
            .collect();
        let aa = times.iter().map(|&t| mids.iter().map(|&x| big_a(t, x)).collect()).collect();
        Self::from_samples(mesh, grid, av, bv, muv, om, aa)
    }

    pub fn constant(mesh: &Mesh1D, grid: &TimeGrid, a: f64, b: f64, mu: f64, omega: f64, big_a: f64) -> Result<Self> {
        Self::from_fns(mesh, grid, |_, _| a, |_, _| b, |_, _| mu, |_, _| omega, |_, _| big_a)
    }

    pub fn steps(&self) -> usize {
        self.a.len() - 1
    }

    pub fn step(&self, i: usize) -> StepCoefficients<'_> {
        StepCoefficients {
            a: &self.a[i],
            b: &self.b[i],
            mu: &self.mu[i],
            omega: &self.omega[i],
            big_a: &self.big_a[i],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateConstants {
    pub tau0: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn tau0_from_norms(n: &QuintetNorms, nu: f64) -> f64 {
    let m = 1f64.min(nu * nu).min(n.delta_star);
    m / (16.0 * (1.0 + n.b_inf + n.mu_linf_h.powi(2) + n.omega_inf.powi(2)))
}

pub fn tau0(q: &CoefficientQuintet, nu: f64) -> f64 {
    tau0_from_norms(&q.norms, nu)
}

pub fn constants_from_norms(n: &QuintetNorms, nu: f64, t_final: f64) -> EstimateConstants {
    let m = 1f64.min(nu * nu).min(n.delta_star);
    let c0 = 16.0 * (1.0 + n.a_w1inf + n.b_inf + n.mu_linf_h.powi(2) + n.omega_inf.powi(2)) / m;
    let e = (1.5 * c0 * t_final).exp();
    let c1 = 4.0 * c0 * c0 * e;
    let c2 = 4.0
        * c0.powi(6)
        * e
        * (1.0 + n.a_w1inf).powi(2)
        * (1.0 + nu + n.b_inf + n.omega_inf + n.big_a_inf).powi(2);
    EstimateConstants { tau0: tau0_from_norms(n, nu), c0, c1, c2 }
}

pub fn constants(q: &CoefficientQuintet, nu: f64, t_final: f64) -> EstimateConstants {
    constants_from_norms(&q.norms, nu, t_final)
}

/// Returns a warning when tau is at or above tau0, or an error under the
/// strict policy when tau >= 2 tau0.
pub fn check_tau(tau: f64, tau0: f64, policy: TauPolicy) -> Result<Option<String>> {
    if tau >= 2.0 * tau0 && policy == TauPolicy::Strict {
        return Err(Error::TauTooLarge { tau, tau0 });
    }
    if tau >= tau0 {
        return Ok(Some(format!(
            "tau = {tau:.6e} is not below the linear stability bound tau0 = {tau0:.6e}; unique solvability of each step is not guaranteed"
        )));
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearTriple {
    pub p: BulkBoundaryFn,
    pub z: GridFn0,
}

impl LinearTriple {
    pub fn zeros(mesh: &Mesh1D) -> Self {
        Self { p: BulkBoundaryFn::zeros(mesh), z: GridFn0::zeros(mesh) }
    }
}

/// Forcing (h, h_Gamma, k) on nodes 0..=N. `k` is a density; only its load
/// on interior test functions enters.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingTriple {
    pub h: Vec<GridFn>,
    pub h_gamma: Vec<BoundaryPair>,
    pub k: Vec<GridFn>,
}

impl ForcingTriple {
    pub fn zeros(mesh: &Mesh1D, grid: &TimeGrid) -> Self {
        let n = grid.steps() + 1;
        Self {
            h: vec![vec![0.0; mesh.n_nodes()]; n],
            h_gamma: vec![[0.0; 2]; n],
            k: vec![vec![0.0; mesh.n_nodes()]; n],
        }
    }

    pub fn check_shape(&self, mesh: &Mesh1D, grid: &TimeGrid) -> Result<()> {
        let n = grid.steps() + 1;
        if self.h.len() != n || self.h_gamma.len() != n || self.k.len() != n {
            return Err(Error::Dimension(format!("forcing sequences need {n} time nodes")));
        }
        for (h, k) in self.h.iter().zip(&self.k) {
            mesh.check_len(h, "forcing h")?;
            mesh.check_len(k, "forcing k")?;
        }
        Ok(())
    }

    pub fn axpy(&self, a: f64, o: &Self) -> Self {
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + a * q).collect::<Vec<_>>();
        Self {
            h: self.h.iter().zip(&o.h).map(|(x, y)| comb(x, y)).collect(),
            h_gamma: self.h_gamma.iter().zip(&o.h_gamma).map(|(x, y)| [x[0] + a * y[0], x[1] + a * y[1]]).collect(),
            k: self.k.iter().zip(&o.k).map(|(x, y)| comb(x, y)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearStepInfo {
    pub pivot_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct LinearTrajectory {
    pub steps: Vec<LinearTriple>,
    pub info: Vec<LinearStepInfo>,
    pub tau0: f64,
    pub warnings: Vec<String>,
}

#[inline]
fn ip(j: usize) -> usize {
    if j == 0 {
        0
    } else {
        2 * j - 1
    }
}

#[inline]
fn iz(j: usize) -> usize {
    2 * j
}

/// Unknown ordering p_0, p_1, z_1, ..., p_{n-1}, z_{n-1}, p_n.
pub fn index_p(j: usize) -> usize {
    ip(j)
}

pub fn index_z(j: usize) -> usize {
    iz(j)
}

/// Step matrix of the coupled system (symmetric by construction).
pub fn assemble_step(mesh: &Mesh1D, c: &StepCoefficients<'_>, tau: f64, nu: f64) -> BandMatrix {
    let n = mesh.n_cells();
    let h = mesh.h();
    let mut m = BandMatrix::new(2 * n, 3, 3);
    let (lo, di, up) = mesh.mass_bands(None);
    for j in 0..=n {
        m.add(ip(j), ip(j), di[j] / tau + mesh.weight(j) * c.mu[j]);
        if j < n {
            m.add(ip(j), ip(j + 1), up[j] / tau);
            m.add(ip(j + 1), ip(j), lo[j] / tau);
        }
    }
    m.add(ip(0), ip(0), 1.0 / tau);
    m.add(ip(n), ip(n), 1.0 / tau);
    let (alo, adi, aup) = mesh.mass_bands(Some(c.a));
    for j in 1..n {
        m.add(iz(j), iz(j), adi[j] / tau + mesh.weight(j) * c.b[j]);
        if j + 1 < n {
            m.add(iz(j), iz(j + 1), aup[j] / tau);
            m.add(iz(j + 1), iz(j), alo[j] / tau);
        }
    }
    for cell in 0..n {
        let (l, r) = (cell, cell + 1);
        let k = 1.0 / h;
        m.add(ip(l), ip(l), k);
        m.add(ip(r), ip(r), k);
        m.add(ip(l), ip(r), -k);
        m.add(ip(r), ip(l), -k);
        let kz = (c.big_a[cell] + nu * nu) / h;
        let zl = l > 0;
        let zr = r < n;
        if zl {
            m.add(iz(l), iz(l), kz);
        }
        if zr {
            m.add(iz(r), iz(r), kz);
        }
        if zl && zr {
            m.add(iz(l), iz(r), -kz);
            m.add(iz(r), iz(l), -kz);
        }
        let [wl, wr] = c.omega[cell];
        if zr {
            m.add(ip(l), iz(r), 0.5 * wl);
            m.add(ip(r), iz(r), 0.5 * wr);
            m.add(iz(r), ip(l), 0.5 * wl);
            m.add(iz(r), ip(r), 0.5 * wr);
        }
        if zl {
            m.add(ip(l), iz(l), -0.5 * wl);
            m.add(ip(r), iz(l), -0.5 * wr);
            m.add(iz(l), ip(l), -0.5 * wl);
            m.add(iz(l), ip(r), -0.5 * wr);
        }
    }
    m
}

/// Right-hand side for one step.
pub fn assemble_rhs(
    mesh: &Mesh1D,
    c: &StepCoefficients<'_>,
    prev: &LinearTriple,
    h: &[f64],
    h_gamma: BoundaryPair,
    k: &[f64],
    tau: f64,
) -> Vec<f64> {
    let n = mesh.n_cells();
    let mut rhs = vec![0.0; 2 * n];
    let pp = prev.p.bulk();
    let mp = mesh.mass_apply(pp);
    let mh = mesh.mass_apply(h);
    for j in 0..=n {
        rhs[ip(j)] = mp[j] / tau + mh[j];
    }
    rhs[ip(0)] += pp[0] / tau + h_gamma[0];
    rhs[ip(n)] += pp[n] / tau + h_gamma[1];
    let mz = mesh.weighted_mass_apply(c.a, &prev.z);
    let mk = mesh.mass_apply(k);
    for j in 1..n {
        rhs[iz(j)] = mz[j] / tau + mk[j];
    }
    rhs
}

fn unpack(mesh: &Mesh1D, x: &[f64]) -> LinearTriple {
    let n = mesh.n_cells();
    let p = (0..=n).map(|j| x[ip(j)]).collect();
    let z = GridFn0::from_interior(&(1..n).map(|j| x[iz(j)]).collect::<Vec<_>>());
    LinearTriple { p: BulkBoundaryFn::from_bulk(p), z }
}

/// One implicit step of the coupled (p, p_Gamma, z) system.
#[allow(clippy::too_many_arguments)]
pub fn solve_step(
    mesh: &Mesh1D,
    prev: &LinearTriple,
    c: &StepCoefficients<'_>,
    h: &[f64],
    h_gamma: BoundaryPair,
    k: &[f64],
    tau: f64,
    nu: f64,
) -> Result<(LinearTriple, LinearStepInfo)> {
    let lu = assemble_step(mesh, c, tau, nu).factor()?;
    if lu.pivot_ratio() < 1e-14 {
        return Err(Error::StepFailure {
            step: 0,
            reason: format!("ill-conditioned step matrix (pivot ratio {:.3e})", lu.pivot_ratio()),
        });
    }
    let x = lu.solve(&assemble_rhs(mesh, c, prev, h, h_gamma, k, tau));
    Ok((unpack(mesh, &x), LinearStepInfo { pivot_ratio: lu.pivot_ratio() }))
}

#[allow(non_snake_case)]
pub fn solve_P(
    mesh: &Mesh1D,
    grid: &TimeGrid,
    init: &LinearTriple,
    q: &CoefficientQuintet,
    forcing: &ForcingTriple,
    nu: f64,
    policy: TauPolicy,
) -> Result<LinearTrajectory> {
    mesh.check_len(init.p.bulk(), "initial p")?;
    mesh.check_len(&init.z, "initial z")?;
    forcing.check_shape(mesh, grid)?;
    if q.steps() != grid.steps() {
        return Err(Error::Dimension(format!(
            "coefficients cover {} steps, time grid has {}",
            q.steps(),
            grid.steps()
        )));
    }
    let t0 = tau0(q, nu);
    let mut warnings = Vec::new();
    if let Some(w) = check_tau(grid.tau(), t0, policy)? {
        warnings.push(w);
    }
    let mut steps = Vec::with_capacity(grid.steps() + 1);
    let mut info = Vec::with_capacity(grid.steps());
    steps.push(init.clone());
    for i in 1..=grid.steps() {
        let (next, inf) = solve_step(
            mesh,
            &steps[i - 1],
            &q.step(i),
            &forcing.h[i],
            forcing.h_gamma[i],
            &forcing.k[i],
            grid.tau(),
            nu,
        )
        .map_err(|e| e.at_step(i))?;
        steps.push(next);
        info.push(inf);
    }
    Ok(LinearTrajectory { steps, info, tau0: t0, warnings })
}

/// Per-step quantities used by the estimates.
struct StepNorms {
    x: f64,
    za: f64,
    w: f64,
    v: f64,
    px: f64,
    v0: f64,
}

fn step_norms(mesh: &Mesh1D, s: &LinearTriple, a: &[f64]) -> StepNorms {
    let p = s.p.bulk();
    let px = grad_sq(mesh, p);
    let h2 = norm_h(mesh, p).powi(2);
    let [g0, g1] = s.p.boundary();
    StepNorms {
        x: norm_x_sq(mesh, p),
        za: dot(&s.z, &mesh.weighted_mass_apply(a, &s.z)),
        w: h2 + px + g0 * g0 + g1 * g1,
        v: h2 + px,
        px,
        v0: grad_sq(mesh, &s.z),
    }
}

fn dual_sq(mesh: &Mesh1D, density: &[f64]) -> f64 {
    norm_v0_dual(mesh, &GridFn0::zeroed(mesh.mass_apply(density))).powi(2)
}

/// `c * data`, treating 0 * inf as 0.
fn bound(c: f64, data: f64) -> f64 {
    if data == 0.0 {
        0.0
    } else {
        c * data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Holds up to relative float slack.
    pub fn holds(&self, slack: f64) -> bool {
        self.slack_margin(slack) >= 0.0
    }

    /// Margin including the relative slack; nonnegative exactly when `holds`.
    pub fn slack_margin(&self, slack: f64) -> f64 {
        self.rhs + slack * (self.lhs.abs() + self.rhs.abs()) - self.lhs
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AprioriReport {
    /// Per-step energy inequality (I), steps 1..=N.
    pub step_energy: Vec<Inequality>,
    /// Per-step increment inequality (II), steps 1..=N.
    pub step_increment: Vec<Inequality>,
    /// sup(|p|_X^2 + |sqrt(a) z|^2) + sum(|p|_W^2 + nu^2 |z|_V0^2) bound.
    pub integrated: Inequality,
    /// time-derivative and sup-V bound of p.
    pub p_regularity: Inequality,
    /// time-derivative bound of z in the V0 dual.
    pub z_regularity: Inequality,
    pub passed: bool,
}

impl AprioriReport {
    pub fn worst_step_margin(&self) -> f64 {
        self.step_energy.iter().chain(&self.step_increment).map(|i| i.margin()).fold(f64::INFINITY, f64::min)
    }
}

pub const FLOAT_SLACK: f64 = 1e-12;

/// Data norms |p0|_X^2 + |sqrt(a0) z0|^2, |p0|_W^2 + |sqrt(a0) z0|^2,
/// |h|^2 and |k|^2 in the time-integrated norms.
pub fn data_norms(
    mesh: &Mesh1D,
    grid: &TimeGrid,
    init: &LinearTriple,
    q: &CoefficientQuintet,
    forcing: &ForcingTriple,
) -> (f64, f64, f64, f64) {
    let n0 = step_norms(mesh, init, &q.a[0]);
    let tau = grid.tau();
    let mut hx = 0.0;
    let mut kv = 0.0;
    for i in 1..=grid.steps() {
        let [g0, g1] = forcing.h_gamma[i];
        hx += tau * (norm_h(mesh, &forcing.h[i]).powi(2) + g0 * g0 + g1 * g1);
        kv += tau * dual_sq(mesh, &forcing.k[i]);
    }
    (n0.x + n0.za, n0.w + n0.za, hx, kv)
}

pub fn check_apriori(
    mesh: &Mesh1D,
    grid: &TimeGrid,
    traj: &LinearTrajectory,
    q: &CoefficientQuintet,
    forcing: &ForcingTriple,
    consts: &EstimateConstants,
    nu: f64,
) -> AprioriReport {
    let tau = grid.tau();
    let c0 = consts.c0;
    let nrm: Vec<StepNorms> = traj.steps.iter().enumerate().map(|(i, s)| step_norms(mesh, s, &q.a[i])).collect();
    let mut step_energy = Vec::new();
    let mut step_increment = Vec::new();
    let mut dt_p = 0.0;
    let mut dt_z = 0.0;
    let mut sum_wv = 0.0;
    for i in 1..traj.steps.len() {
        let (a, b) = (&nrm[i], &nrm[i - 1]);
        let [g0, g1] = forcing.h_gamma[i];
        let hx = norm_h(mesh, &forcing.h[i]).powi(2) + g0 * g0 + g1 * g1;
        let kd = dual_sq(mesh, &forcing.k[i]);
        step_energy.push(Inequality {
            lhs: (a.x - b.x) / tau + (a.za - b.za) / tau + a.w + nu * nu * a.v0,
            rhs: 0.5 * c0 * (a.x + b.x + a.za + b.za) + c0 * (hx + kd),
        });
        let dp: Vec<f64> =
            traj.steps[i].p.bulk().iter().zip(traj.steps[i - 1].p.bulk()).map(|(x, y)| x - y).collect();
        let dpx = norm_x_sq(mesh, &dp);
        step_increment.push(Inequality {
            lhs: dpx / tau + (a.px - b.px),
            rhs: c0 * tau * (a.v + nu * nu * a.v0) + 2.0 * tau * hx,
        });
        dt_p += dpx / tau;
        let dz: Vec<f64> = traj.steps[i].z.iter().zip(traj.steps[i - 1].z.iter()).map(|(x, y)| (x - y) / tau).collect();
        dt_z += tau * dual_sq(mesh, &dz);
        sum_wv += tau * (a.w + nu * nu * a.v0);
    }
    let (d_x, d_w, hx, kv) = data_norms(mesh, grid, &traj.steps[0], q, forcing);
    let t = grid.steps() as f64 * tau;
    let sup_xz = nrm.iter().map(|s| s.x + s.za).fold(0.0, f64::max);
    let sup_v = nrm.iter().map(|s| s.v).fold(0.0, f64::max);
    let integrated = Inequality { lhs: sup_xz + sum_wv, rhs: bound(2.0 * c0 * (c0 * t).exp(), d_x + hx + kv) };
    let p_regularity = Inequality { lhs: dt_p + sup_v, rhs: bound(consts.c1, d_w + hx + kv) };
    let z_regularity = Inequality { lhs: dt_z, rhs: bound(consts.c2, d_w + hx + kv) };
    let passed = step_energy.iter().chain(&step_increment).all(|i| i.holds(FLOAT_SLACK))
        && integrated.holds(FLOAT_SLACK)
        && p_regularity.holds(FLOAT_SLACK)
        && z_regularity.holds(FLOAT_SLACK);
    AprioriReport { step_energy, step_increment, integrated, p_regularity, z_regularity, passed }
}
