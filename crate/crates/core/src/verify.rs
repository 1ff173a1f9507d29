//! Executable checks of the inequalities and convergence properties the
//! solvers rely on. Every check is deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{
    adjoint_residual, conjugacy_check, cost, evaluate, solve_adjoint_with, tracking_forcing,
};
use crate::benchmarks::{compatible_forcing, random_controls};
use crate::error::{Error, Result};
use crate::linear::{
    check_apriori, constants, solve_P, tau0, CoefficientQuintet, ForcingTriple, Inequality, LinearTrajectory,
    LinearTriple, FLOAT_SLACK,
};
use crate::mesh::{norm_h, norm_x_sq, BulkBoundaryFn, GridFn0, MassKind, Mesh1D, TimeGrid};
use crate::problem::{ControlTriple, ProblemConfig, TauPolicy};
use crate::regularization::Epsilon;
use crate::state::{solve_state, StateTrajectory};

/// Sequences P_0..P_N and Q_1..Q_N (stored as q[0..N]) for the discrete
/// Gronwall lemma.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallInstance {
    pub c: f64,
    pub tau: f64,
    pub t_final: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl GronwallInstance {
    /// N with (N - 1) tau < T <= N tau.
    pub fn steps(tau: f64, t_final: f64) -> usize {
        let n = (t_final / tau).ceil() as usize;
        if (n as f64 - 1.0) * tau >= t_final {
            n - 1
        } else {
            n.max(1)
        }
    }

    /// Build the sequence at equality of the recursion
    /// (P_i - P_{i-1}) / tau = (c/2)(P_i + P_{i-1}) + Q_i.
    pub fn at_equality(c: f64, tau: f64, t_final: f64, p0: f64, q: Vec<f64>) -> Result<Self> {
        let n = Self::steps(tau, t_final);
        if q.len() != n {
            return Err(Error::Dimension(format!("need {n} values of Q")));
        }
        let x = c * tau;
        let mut p = vec![p0];
        for qi in &q {
            let prev = *p.last().unwrap();
            p.push(((1.0 + 0.5 * x) * prev + tau * qi) / (1.0 - 0.5 * x));
        }
        let inst = Self { c, tau, t_final, p, q };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = vec![];
        if !(self.c >= 0.0) {
            v.push(format!("c = {} must be nonnegative", self.c));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            v.push(format!("tau = {} must lie in (0,1)", self.tau));
        }
        if !(self.c * self.tau < 2.0) {
            v.push(format!("c tau = {} must be below 2", self.c * self.tau));
        }
        if !(self.t_final > 0.0) {
            v.push("T must be positive".into());
        }
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let n = Self::steps(self.tau, self.t_final);
        if self.p.len() != n + 1 || self.q.len() != n {
            return Err(Error::Dimension(format!("need P_0..P_{n} and Q_1..Q_{n}")));
        }
        if self.p.iter().chain(&self.q).any(|v| !(*v >= 0.0)) {
            return Err(Error::Invalid("P and Q must be nonnegative".into()));
        }
        for i in 1..=n {
            let lhs = (self.p[i] - self.p[i - 1]) / self.tau;
            let rhs = 0.5 * self.c * (self.p[i] + self.p[i - 1]) + self.q[i - 1];
            if lhs > rhs + 1e-12 * (lhs.abs() + rhs.abs()) {
                return Err(Error::Invalid(format!("recursion hypothesis fails at i = {i}")));
            }
        }
        Ok(())
    }
}

/// 2 e^{3cT/2} (P_0 + tau sum Q_i).
pub fn discrete_gronwall_bound(inst: &GronwallInstance) -> Result<f64> {
    if !(inst.c * inst.tau < 2.0) {
        return Err(Error::Config(vec![format!("c tau = {} must be below 2", inst.c * inst.tau)]));
    }
    let sq: f64 = inst.q.iter().sum();
    Ok(2.0 * (1.5 * inst.c * inst.t_final).exp() * (inst.p[0] + inst.tau * sq))
}

/// Worst of P_i against the bound over i = 1..N.
pub fn check_gronwall(inst: &GronwallInstance) -> Result<Inequality> {
    let b = discrete_gronwall_bound(inst)?;
    let worst = inst.p[1..].iter().copied().fold(0.0, f64::max);
    Ok(Inequality { lhs: worst, rhs: b })
}

/// Random instances at recursion equality. The lemma's bound can only hold
/// for c tau <= 2/3 (with N = 1 and T -> 0 the ratio (1 + c tau/2)/(1 - c tau/2)
/// must not exceed 2), so c tau is drawn from (0, 2/3].
pub fn random_gronwall_instances(seed: u64, count: usize) -> Vec<GronwallInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let tau: f64 = 10f64.powf(rng.gen_range(-3.0..-0.3));
            let x: f64 = rng.gen_range(0.0..(2.0 / 3.0));
            let x = if x == 0.0 { 2.0 / 3.0 } else { x };
            let c = x / tau;
            let t_max = (20.0 / c).min(5.0).max(tau);
            let t_final = rng.gen_range(0.0..t_max).max(1e-3 * tau);
            let n = GronwallInstance::steps(tau, t_final);
            let q: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..10.0) }).collect();
            let p0 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..10.0) };
            GronwallInstance::at_equality(c, tau, t_final, p0, q).expect("generator builds admissible instances")
        })
        .collect()
}

/// max over xi of |f_eps1(xi) - f_eps2(xi)| - |eps1 - eps2|; nonpositive in
/// exact arithmetic. The difference is evaluated as
/// (eps1^2 - eps2^2) / (f_eps1 + f_eps2) to avoid cancellation at large |xi|.
pub fn check_mosco_bound(eps1: f64, eps2: f64, xis: &[f64]) -> f64 {
    xis.iter()
        .map(|&xi| {
            let (f1, f2) = (eps1.hypot(xi), eps2.hypot(xi));
            let diff = if f1 + f2 == 0.0 { 0.0 } else { (eps1 - eps2) * (eps1 + eps2) / (f1 + f2) };
            diff.abs() - (eps1 - eps2).abs()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MoscoSweep {
    pub samples: usize,
    pub max_violation: f64,
    pub violations: usize,
}

/// `n` random (eps, eps~, xi) triples with eps in [0, 2], xi in [-10, 10]
/// (one in eight xi set to 0); counts violations beyond `tol`.
pub fn mosco_sweep(seed: u64, n: usize, tol: f64) -> MoscoSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..n {
        let e1 = rng.gen_range(0.0..2.0);
        let e2 = rng.gen_range(0.0..2.0);
        let xi = if rng.gen_ratio(1, 8) { 0.0 } else { rng.gen_range(-10.0..10.0) };
        let v = check_mosco_bound(e1, e2, &[xi]);
        max_violation = max_violation.max(v);
        if v > tol {
            violations += 1;
        }
    }
    MoscoSweep { samples: n, max_violation, violations }
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    /// work_i + tol - dissipation_i - (E_i - E_{i-1}) / tau per step.
    pub margins: Vec<f64>,
    pub tolerance: f64,
    pub worst_margin: f64,
    /// (E_N - E_0) - tau sum work; at most N tau tol when the steps pass.
    pub cumulative_excess: f64,
    pub passed: bool,
}

/// Discrete energy inequality with tolerance c_tol (tau + h^2) |E_0| per step.
pub fn check_energy_dissipation(traj: &StateTrajectory, cfg: &ProblemConfig, c_tol: f64) -> DissipationReport {
    let tau = cfg.grid.tau();
    let h = cfg.mesh.h();
    let e = &traj.energy;
    let tolerance = c_tol * (tau + h * h) * e[0].total().abs();
    let mut margins = vec![];
    let mut work = 0.0;
    for i in 1..e.len() {
        let lhs = e[i].dissipation + (e[i].total() - e[i - 1].total()) / tau;
        margins.push(e[i].work + tolerance - lhs);
        work += tau * e[i].work;
    }
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    DissipationReport {
        cumulative_excess: e[e.len() - 1].total() - e[0].total() - work,
        passed: worst_margin >= 0.0,
        margins,
        tolerance,
        worst_margin,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    /// Resolution parameter per level (tau or h), decreasing.
    pub sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// log2-style orders between consecutive levels.
    pub orders: Vec<f64>,
    /// Least-squares slope of log(error) against log(size).
    pub fitted_order: f64,
}

pub fn observed_orders(sizes: &[f64], errors: &[f64]) -> ConvergenceStudy {
    let orders = (1..sizes.len())
        .map(|k| (errors[k - 1] / errors[k]).ln() / (sizes[k - 1] / sizes[k]).ln())
        .collect();
    let lx: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    ConvergenceStudy { sizes: sizes.to_vec(), errors: errors.to_vec(), orders, fitted_order: sxy / sxx }
}

/// Errors at each level from `error_at(size)`, then the observed orders.
pub fn convergence_study(sizes: &[f64], mut error_at: impl FnMut(f64) -> Result<f64>) -> Result<ConvergenceStudy> {
    let errors = sizes.iter().map(|&s| error_at(s)).collect::<Result<Vec<_>>>()?;
    Ok(observed_orders(sizes, &errors))
}

/// Manufactured solutions of the linear system with smooth coefficients
/// a = 1 + 0.2 s t x, b = 0.1, mu = 0.5 + 0.5 x, omega = 0.3 cos x,
/// A = 0.2 (1 + x), nu = 1 (s = 1 if the family is time dependent, else 0).
///
/// Time dependent: p = e^{-t} cos(pi x) + t x, z = cos(t) sin(pi x).
/// Linear in time: p = (1 + t)(cos(pi x) + x), z = (1 + t) sin(pi x); implicit
/// Euler is exact in time for this one so only the spatial error remains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManufacturedP {
    TimeDependent,
    LinearInTime,
}

impl ManufacturedP {
    const NU: f64 = 1.0;

    fn s(self) -> f64 {
        match self {
            Self::TimeDependent => 1.0,
            Self::LinearInTime => 0.0,
        }
    }

    /// (p, p_t, p_x, p_xx)
    fn p(self, t: f64, x: f64) -> [f64; 4] {
        let pi = std::f64::consts::PI;
        let (c, s) = ((pi * x).cos(), (pi * x).sin());
        match self {
            Self::TimeDependent => {
                let e = (-t).exp();
                [e * c + t * x, -e * c + x, -pi * e * s + t, -pi * pi * e * c]
            }
            Self::LinearInTime => [(1.0 + t) * (c + x), c + x, (1.0 + t) * (1.0 - pi * s), -(1.0 + t) * pi * pi * c],
        }
    }

    /// (z, z_t, z_x, z_xx)
    fn z(self, t: f64, x: f64) -> [f64; 4] {
        let pi = std::f64::consts::PI;
        let (c, s) = ((pi * x).cos(), (pi * x).sin());
        let (g, gt) = match self {
            Self::TimeDependent => (t.cos(), -t.sin()),
            Self::LinearInTime => (1.0 + t, 1.0),
        };
        [g * s, gt * s, g * pi * c, -g * pi * pi * s]
    }

    pub fn exact_p(self, t: f64, x: f64) -> f64 {
        self.p(t, x)[0]
    }

    pub fn exact_z(self, t: f64, x: f64) -> f64 {
        self.z(t, x)[0]
    }

    pub fn quintet(self, mesh: &Mesh1D, grid: &TimeGrid) -> Result<CoefficientQuintet> {
        let s = self.s();
        CoefficientQuintet::from_fns(
            mesh,
            grid,
            move |t, x| 1.0 + 0.2 * s * t * x,
            |_, _| 0.1,
            |_, x| 0.5 + 0.5 * x,
            |_, x| 0.3 * x.cos(),
            |_, x| 0.2 * (1.0 + x),
        )
    }

    pub fn forcing(self, mesh: &Mesh1D, grid: &TimeGrid) -> ForcingTriple {
        let s = self.s();
        let nu2 = Self::NU * Self::NU;
        let mut f = ForcingTriple::zeros(mesh, grid);
        for (i, t) in grid.times().into_iter().enumerate() {
            f.h[i] = mesh.sample(|x| {
                let [p, pt, _, pxx] = self.p(t, x);
                let zx = self.z(t, x)[2];
                pt - pxx + (0.5 + 0.5 * x) * p + 0.3 * x.cos() * zx
            });
            let [_, pt0, px0, _] = self.p(t, 0.0);
            let [_, pt1, px1, _] = self.p(t, 1.0);
            f.h_gamma[i] = [pt0 - px0, pt1 + px1];
            f.k[i] = mesh.sample(|x| {
                let [z, zt, zx, zxx] = self.z(t, x);
                let [p, _, px, _] = self.p(t, x);
                let a = 1.0 + 0.2 * s * t * x;
                let (aa, aax) = (0.2 * (1.0 + x), 0.2);
                let (w, wx) = (0.3 * x.cos(), -0.3 * x.sin());
                a * zt + 0.1 * z - (aax * zx + (aa + nu2) * zxx + wx * p + w * px)
            });
        }
        f
    }

    pub fn init(self, mesh: &Mesh1D) -> LinearTriple {
        LinearTriple {
            p: BulkBoundaryFn::from_bulk(mesh.sample(|x| self.exact_p(0.0, x))),
            z: GridFn0::from_fn(mesh, |x| self.exact_z(0.0, x)),
        }
    }

    /// L2 error of p plus L2 error of z at the final time.
    pub fn error(self, n_cells: usize, steps: usize, t_final: f64, mass: MassKind) -> Result<f64> {
        let mesh = Mesh1D::new(n_cells)?.with_mass(mass);
        let grid = TimeGrid::from_steps(t_final, steps)?;
        let q = self.quintet(&mesh, &grid)?;
        let tr = solve_P(&mesh, &grid, &self.init(&mesh), &q, &self.forcing(&mesh, &grid), Self::NU, TauPolicy::WarnOnly)?;
        let last = tr.steps.last().unwrap();
        let t = grid.t(steps);
        Ok(mesh.l2_error(last.p.bulk(), |x| self.exact_p(t, x)) + mesh.l2_error(&last.z, |x| self.exact_z(t, x)))
    }
}

/// A random smooth instance of the linear system with tau = tau0 / 2.
#[derive(Clone, Debug)]
pub struct RandomLinearProblem {
    pub mesh: Mesh1D,
    pub grid: TimeGrid,
    pub nu: f64,
    pub quintet: CoefficientQuintet,
    pub init: LinearTriple,
    pub forcing: ForcingTriple,
}

pub fn random_linear_problem(seed: u64, n_cells: usize, steps: usize) -> Result<RandomLinearProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let mesh = Mesh1D::new(n_cells)?;
    let nu = r(0.5, 1.5);
    let (a0, a1, ka) = (r(0.5, 2.0), r(0.0, 0.4), r(0.5, 3.0));
    let (b0, b1) = (r(-0.5, 0.5), r(0.0, 0.5));
    let (m0, m1, km) = (r(-1.0, 1.0), r(0.0, 1.0), r(0.5, 4.0));
    let (w0, w1, kw) = (r(-0.8, 0.8), r(0.0, 0.5), r(0.5, 4.0));
    let (c0, c1) = (r(0.0, 1.0), r(0.0, 0.5));
    let coeffs = move |mesh: &Mesh1D, grid: &TimeGrid| {
        CoefficientQuintet::from_fns(
            mesh,
            grid,
            move |t, x| a0 * (1.0 + a1 * (ka * x + t).sin()),
            move |t, x| b0 + b1 * (x - t).cos(),
            move |t, x| m0 + m1 * (km * x + 2.0 * t).sin(),
            move |t, x| w0 + w1 * (kw * x - t).cos(),
            move |t, x| c0 * (1.0 + c1 * (3.0 * x + t).sin()),
        )
    };
    // tau0 depends only weakly on the grid through the sampled norms
    let mut t_final = 1.0;
    let mut grid = TimeGrid::from_steps(t_final, steps)?;
    for _ in 0..4 {
        let t0 = tau0(&coeffs(&mesh, &grid)?, nu);
        t_final = 0.5 * t0 * steps as f64;
        grid = TimeGrid::from_steps(t_final, steps)?;
    }
    let quintet = coeffs(&mesh, &grid)?;
    if grid.tau() >= tau0(&quintet, nu) {
        return Err(Error::Invalid("could not place tau below tau0".into()));
    }
    let (p0, p1, kp) = (r(-1.0, 1.0), r(-1.0, 1.0), r(0.5, 4.0));
    let (z0, kz) = (r(-1.0, 1.0), r(1.0, 3.0));
    let (h0, h1, g0, g1, k0) = (r(-2.0, 2.0), r(0.5, 5.0), r(-1.0, 1.0), r(-1.0, 1.0), r(-2.0, 2.0));
    let init = LinearTriple {
        p: BulkBoundaryFn::from_bulk(mesh.sample(|x| p0 + p1 * (kp * x).cos())),
        z: GridFn0::from_fn(&mesh, |x| z0 * (kz * std::f64::consts::PI * x).sin()),
    };
    let times = grid.times();
    let forcing = ForcingTriple {
        h: times.iter().map(|&t| mesh.sample(|x| h0 * (h1 * x + t).sin())).collect(),
        h_gamma: times.iter().map(|&t| [g0 * (1.0 + t), g1 * (1.0 - t)]).collect(),
        k: times.iter().map(|&t| mesh.sample(|x| k0 * (x * x - t))).collect(),
    };
    Ok(RandomLinearProblem { mesh, grid, nu, quintet, init, forcing })
}

impl RandomLinearProblem {
    pub fn solve(&self) -> Result<LinearTrajectory> {
        solve_P(&self.mesh, &self.grid, &self.init, &self.quintet, &self.forcing, self.nu, TauPolicy::Strict)
    }
}

/// Difference of two runs of the same linear system against the integrated
/// stability bound applied to the difference of their data.
pub fn check_continuous_dependence(
    problem: &RandomLinearProblem,
    other_init: &LinearTriple,
    other_forcing: &ForcingTriple,
) -> Result<Inequality> {
    let a = problem.solve()?;
    let b = solve_P(&problem.mesh, &problem.grid, other_init, &problem.quintet, other_forcing, problem.nu, TauPolicy::Strict)?;
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
    let steps = a
        .steps
        .iter()
        .zip(&b.steps)
        .map(|(s, t)| LinearTriple {
            p: BulkBoundaryFn::from_bulk(diff(s.p.bulk(), t.p.bulk())),
            z: GridFn0::from_interior(&diff(s.z.interior(), t.z.interior())),
        })
        .collect();
    let dtraj = LinearTrajectory { steps, info: a.info.clone(), tau0: a.tau0, warnings: vec![] };
    let dforcing = problem.forcing.axpy(-1.0, other_forcing);
    let consts = constants(&problem.quintet, problem.nu, problem.grid.t_final());
    let rep = check_apriori(&problem.mesh, &problem.grid, &dtraj, &problem.quintet, &dforcing, &consts, problem.nu);
    Ok(rep.integrated)
}

/// Adjoint directional derivatives against central differences of the cost.
#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub delta: f64,
    pub adjoint: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

/// `n_dirs` smooth random directions (seeded from `seed`), step `delta`.
pub fn fd_gradient_check(
    cfg: &ProblemConfig,
    controls: &ControlTriple,
    seed: u64,
    n_dirs: usize,
    delta: f64,
) -> Result<FdReport> {
    let ev = evaluate(cfg, controls)?;
    let tau = cfg.grid.tau();
    let j = |u: &ControlTriple| -> Result<f64> {
        let tr = solve_state(cfg, &cfg.init, u)?;
        Ok(cost(cfg, &tr, u))
    };
    let (mut ad, mut fd, mut rel) = (vec![], vec![], vec![]);
    for k in 0..n_dirs {
        let d = random_controls(cfg, seed.wrapping_add(k as u64));
        let a = ev.gradient.inner(&d, &cfg.mesh, tau);
        let f = (j(&controls.axpy(delta, &d))? - j(&controls.axpy(-delta, &d))?) / (2.0 * delta);
        rel.push((a - f).abs() / f.abs().max(f64::MIN_POSITIVE));
        ad.push(a);
        fd.push(f);
    }
    let max_rel_error = rel.iter().copied().fold(0.0, f64::max);
    Ok(FdReport { delta, adjoint: ad, finite_difference: fd, rel_errors: rel, max_rel_error })
}

/// max over time nodes of (|eta - eta'|_X^2 + |theta - theta'|_H^2)^{1/2}.
pub fn state_distance(mesh: &Mesh1D, a: &StateTrajectory, b: &StateTrajectory) -> f64 {
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
    a.states
        .iter()
        .zip(&b.states)
        .map(|(s, t)| {
            let de = diff(s.eta.bulk(), t.eta.bulk());
            let dt = diff(&s.theta, &t.theta);
            (norm_x_sq(mesh, &de) + norm_h(mesh, &dt).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Distance of the states at each eps in `seq` to the state at `eps_ref`,
/// all with the data of `cfg` and the same controls.
pub fn eps_continuity(cfg: &ProblemConfig, controls: &ControlTriple, seq: &[f64], eps_ref: f64) -> Result<Vec<f64>> {
    let reference = solve_state(&cfg.with_eps(Epsilon::new(eps_ref)?), &cfg.init, controls)?;
    seq.iter()
        .map(|&e| {
            let tr = solve_state(&cfg.with_eps(Epsilon::new(e)?), &cfg.init, controls)?;
            Ok(state_distance(&cfg.mesh, &tr, &reference))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// One line of the verification report. `margin` is signed so that a
/// nonnegative value passes.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyRow {
    pub check: String,
    pub status: Status,
    pub margin: f64,
    pub tolerance: f64,
}

impl VerifyRow {
    fn new(check: &str, margin: f64, tolerance: f64) -> Self {
        let status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
        Self { check: check.into(), status, margin, tolerance }
    }

    fn skipped(check: &str, tolerance: f64) -> Self {
        Self { check: check.into(), status: Status::Skipped, margin: f64::NAN, tolerance }
    }

    fn failed(check: &str, tolerance: f64) -> Self {
        Self { check: check.into(), status: Status::Fail, margin: f64::NAN, tolerance }
    }
}

/// Tolerances of the verification suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    pub mosco_samples: usize,
    pub mosco_tol: f64,
    pub gronwall_instances: usize,
    pub apriori_problems: usize,
    /// C in the discretization tolerance C (tau + h^2).
    pub c_tol: f64,
    pub fd_directions: usize,
    pub fd_delta: f64,
    pub fd_tol: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            mosco_samples: 100_000,
            mosco_tol: 1e-14,
            gronwall_instances: 1000,
            apriori_problems: 5,
            c_tol: 10.0,
            fd_directions: 4,
            fd_delta: 1e-4,
            fd_tol: 1e-2,
        }
    }
}

/// The report written by the `verify` mode: problem-independent oracles
/// followed by checks on `cfg` with the given controls.
pub fn run_suite(cfg: &ProblemConfig, controls: &ControlTriple, seed: u64, opts: &SuiteOptions) -> Vec<VerifyRow> {
    let mut rows = vec![];
    let sweep = mosco_sweep(seed, opts.mosco_samples, opts.mosco_tol);
    rows.push(VerifyRow::new("mosco_bound", opts.mosco_tol - sweep.max_violation, opts.mosco_tol));

    let mut worst = f64::INFINITY;
    for inst in random_gronwall_instances(seed, opts.gronwall_instances) {
        match check_gronwall(&inst) {
            Ok(ineq) => worst = worst.min(ineq.slack_margin(FLOAT_SLACK)),
            Err(_) => worst = f64::NEG_INFINITY,
        }
    }
    rows.push(VerifyRow::new("discrete_gronwall", worst, FLOAT_SLACK));

    let (mut step_m, mut int_m, mut dep_m) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for k in 0..opts.apriori_problems {
        let s = seed.wrapping_add(k as u64);
        let outcome = random_linear_problem(s, 32, 64).and_then(|p| {
            let tr = p.solve()?;
            let consts = constants(&p.quintet, p.nu, p.grid.t_final());
            let rep = check_apriori(&p.mesh, &p.grid, &tr, &p.quintet, &p.forcing, &consts, p.nu);
            let other = random_linear_problem(s.wrapping_add(1 << 32), 32, 64)?;
            let init = LinearTriple {
                p: BulkBoundaryFn::from_bulk(p.init.p.bulk().iter().zip(other.init.p.bulk()).map(|(a, b)| a + 0.1 * b).collect()),
                z: GridFn0::from_interior(&p.init.z.interior().iter().zip(other.init.z.interior()).map(|(a, b)| a + 0.1 * b).collect::<Vec<_>>()),
            };
            let forcing = p.forcing.axpy(0.1, &other.forcing);
            let dep = check_continuous_dependence(&p, &init, &forcing)?;
            let steps = rep
                .step_energy
                .iter()
                .chain(&rep.step_increment)
                .map(|i| i.slack_margin(FLOAT_SLACK))
                .fold(f64::INFINITY, f64::min);
            Ok((steps, rep.integrated.slack_margin(FLOAT_SLACK), dep.slack_margin(FLOAT_SLACK)))
        });
        match outcome {
            Ok((a, b, c)) => {
                step_m = step_m.min(a);
                int_m = int_m.min(b);
                dep_m = dep_m.min(c);
            }
            Err(_) => {
                step_m = f64::NEG_INFINITY;
                int_m = f64::NEG_INFINITY;
                dep_m = f64::NEG_INFINITY;
            }
        }
    }
    rows.push(VerifyRow::new("apriori_step_bounds", step_m, FLOAT_SLACK));
    rows.push(VerifyRow::new("apriori_integrated_bound", int_m, FLOAT_SLACK));
    rows.push(VerifyRow::new("continuous_dependence", dep_m, FLOAT_SLACK));

    let disc_tol = opts.c_tol * (cfg.grid.tau() + cfg.mesh.h().powi(2));
    let zero = ControlTriple::zeros(&cfg.mesh, &cfg.grid);
    match solve_state(cfg, &cfg.init, &zero) {
        Ok(tr) => {
            let rep = check_energy_dissipation(&tr, cfg, opts.c_tol);
            rows.push(VerifyRow::new("energy_dissipation", rep.worst_margin, rep.tolerance));
        }
        Err(_) => rows.push(VerifyRow::failed("energy_dissipation", disc_tol)),
    }

    if cfg.eps.is_singular() {
        for name in ["adjoint_residual", "gradient_fd", "conjugacy"] {
            rows.push(VerifyRow::skipped(name, f64::NAN));
        }
        return rows;
    }
    let adjoint_tol = 1e-12;
    match solve_state(cfg, &cfg.init, controls).and_then(|tr| {
        let f = tracking_forcing(cfg, &tr);
        let adj = solve_adjoint_with(cfg, &tr, &f)?;
        let res = adjoint_residual(cfg, &tr, &f, &adj)?;
        let conj = conjugacy_check(cfg, &tr, &compatible_forcing(cfg, seed), &compatible_forcing(cfg, seed.wrapping_add(1)))?;
        Ok((res, conj))
    }) {
        Ok((res, conj)) => {
            rows.push(VerifyRow::new("adjoint_residual", adjoint_tol - res, adjoint_tol));
            rows.push(VerifyRow::new("conjugacy", disc_tol - conj, disc_tol));
        }
        Err(_) => {
            rows.push(VerifyRow::failed("adjoint_residual", adjoint_tol));
            rows.push(VerifyRow::failed("conjugacy", disc_tol));
        }
    }
    match fd_gradient_check(cfg, controls, seed, opts.fd_directions, opts.fd_delta) {
        Ok(rep) => rows.push(VerifyRow::new("gradient_fd", opts.fd_tol - rep.max_rel_error, opts.fd_tol)),
        Err(_) => rows.push(VerifyRow::failed("gradient_fd", opts.fd_tol)),
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gronwall_examples() {
        let inst = GronwallInstance::at_equality(0.0, 0.1, 1.0, 1.0, vec![1.0; 10]).unwrap();
        assert!((discrete_gronwall_bound(&inst).unwrap() - 4.0).abs() < 1e-12);
        assert!(inst.p.iter().enumerate().all(|(i, p)| (p - (1.0 + 0.1 * i as f64)).abs() < 1e-12));
        let zero = GronwallInstance::at_equality(1.0, 0.1, 1.0, 0.0, vec![0.0; 10]).unwrap();
        assert_eq!(discrete_gronwall_bound(&zero).unwrap(), 0.0);
        assert!(zero.p.iter().all(|p| *p == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let inst = GronwallInstance::at_equality(1.0, 0.01, 1.0, 0.5, q).unwrap();
        assert!(check_gronwall(&inst).unwrap().holds(FLOAT_SLACK));
    }

    #[test]
    fn gronwall_hypothesis_enforced() {
        let bad = GronwallInstance { c: 30.0, tau: 0.1, t_final: 0.1, p: vec![1.0, 1.0], q: vec![0.0] };
        assert!(discrete_gronwall_bound(&bad).is_err());
        let broken = GronwallInstance { c: 0.0, tau: 0.1, t_final: 0.1, p: vec![1.0, 5.0], q: vec![0.0] };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn gronwall_bound_fails_beyond_two_thirds() {
        // N = 1, T small: P_1 / P_0 = (1 + x/2)/(1 - x/2) exceeds 2 e^{1.5 c T} once x > 2/3
        let x: f64 = 0.9;
        let tau = 0.5;
        let inst = GronwallInstance::at_equality(x / tau, tau, 1e-6, 1.0, vec![0.0]).unwrap();
        assert!(!check_gronwall(&inst).unwrap().holds(FLOAT_SLACK));
    }

    #[test]
    fn mosco_examples() {
        assert_eq!(check_mosco_bound(0.3, 0.3, &[0.0, 1.0, -4.0]), 0.0);
        assert!(check_mosco_bound(0.7, 0.2, &[0.0]).abs() < 1e-16);
        assert!(mosco_sweep(1, 10_000, 1e-15).violations == 0);
    }

    #[test]
    fn orders_of_exact_power_law() {
        let s = observed_orders(&[0.1, 0.05, 0.025], &[0.02, 0.005, 0.00125]);
        assert!(s.orders.iter().all(|o| (o - 2.0).abs() < 1e-12));
        assert!((s.fitted_order - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_solution_is_reproduced() {
        // p = 1, z = 0 with mu = omega = 0 and zero forcing stays exact at every level
        for n in [8, 16, 32] {
            let mesh = Mesh1D::new(n).unwrap();
            let grid = TimeGrid::from_steps(0.1, 4).unwrap();
            let q = CoefficientQuintet::constant(&mesh, &grid, 1.0, 0.0, 0.0, 0.0, 0.3).unwrap();
            let init = LinearTriple { p: BulkBoundaryFn::from_bulk(vec![1.0; n + 1]), z: GridFn0::zeros(&mesh) };
            let tr = solve_P(&mesh, &grid, &init, &q, &ForcingTriple::zeros(&mesh, &grid), 1.0, TauPolicy::Strict).unwrap();
            let e = mesh.l2_error(tr.steps[4].p.bulk(), |_| 1.0);
            assert!(e < 1e-14);
        }
    }

    #[test]
    fn spatial_family_is_exact_in_time() {
        // with one step or four, the error is the same up to roundoff
        let a = ManufacturedP::LinearInTime.error(16, 1, 0.1, MassKind::Consistent).unwrap();
        let b = ManufacturedP::LinearInTime.error(16, 4, 0.1, MassKind::Consistent).unwrap();
        assert!((a - b).abs() < 0.05 * a, "{a} {b}");
    }

    #[test]
    fn continuous_dependence_examples() {
        let p = random_linear_problem(4, 16, 16).unwrap();
        let same = check_continuous_dependence(&p, &p.init, &p.forcing).unwrap();
        assert_eq!(same.lhs, 0.0);
        let mut f2 = p.forcing.clone();
        for h in f2.h.iter_mut() {
            for v in h.iter_mut() {
                *v += 0.1;
            }
        }
        let r = check_continuous_dependence(&p, &p.init, &f2).unwrap();
        assert!(r.lhs > 0.0 && r.holds(FLOAT_SLACK));
    }

    #[test]
    fn random_problems_respect_tau_rule() {
        for seed in 0..3 {
            let p = random_linear_problem(seed, 8, 8).unwrap();
            assert!(p.grid.tau() < tau0(&p.quintet, p.nu));
            p.solve().unwrap();
        }
    }
}
