//! Gradient descent for the regularized control problem and eps-continuation
//! toward the singular one, with certificates for the limit system.

use serde::{Deserialize, Serialize};

use crate::adjoint::{coeffs_from_state, evaluate, tracking_forcing, Evaluation};
use crate::error::{Error, Result};
use crate::linear::LinearTrajectory;
use crate::mesh::{diff_x, dot};
use crate::problem::{ControlTriple, GradientTriple, ProblemConfig};
use crate::regularization::{fp, sgn_residual, Epsilon};
use crate::state::{alpha_bar, cell_f, nodal_average, solve_state, StateTrajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStrategy {
    Fixed,
    #[default]
    Armijo,
    /// Barzilai-Borwein proposals, safeguarded by the Armijo test.
    BarzilaiBorwein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub grad_tol: f64,
    pub strategy: StepStrategy,
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            grad_tol: 1e-8,
            strategy: StepStrategy::Armijo,
            max_backtracks: 40,
        }
    }
}

impl OptimizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = vec![];
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            v.push(format!("armijo constant c1 = {} must lie in (0,1)", self.c1));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            v.push(format!("backtrack factor = {} must lie in (0,1)", self.backtrack));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            v.push(format!("initial step = {} must be positive", self.initial_step));
        }
        if !(self.grad_tol > 0.0) {
            v.push(format!("gradient tolerance = {} must be positive", self.grad_tol));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub eps: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// |(L(u+p), L_Gamma(u_Gamma+p_Gamma), M(v+z))| in the control norm.
    pub optimality_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// Step underflow; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub controls: ControlTriple,
    pub state: StateTrajectory,
    pub adjoint: LinearTrajectory,
    pub gradient: GradientTriple,
    pub cost: f64,
    pub history: Vec<HistoryRow>,
    pub termination: Termination,
}

/// Steepest descent u <- u - s grad J in the control inner product.
pub fn solve_op(cfg: &ProblemConfig, init: &ControlTriple, opt: &OptimizerConfig) -> Result<OptResult> {
    if cfg.eps.is_singular() {
        return Err(Error::SingularLimit("gradient-based optimization"));
    }
    let v = opt.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mesh = &cfg.mesh;
    let tau = cfg.grid.tau();
    let eps = cfg.eps.value();
    let mut u = init.clone();
    let mut ev = evaluate(cfg, &u)?;
    let mut gn = ev.gradient.norm(mesh, tau);
    let mut history = vec![HistoryRow { iter: 0, eps, cost: ev.cost, grad_norm: gn, step: 0.0, optimality_residual: gn }];
    let mut s_prev = opt.initial_step;
    let mut bb: Option<(ControlTriple, GradientTriple)> = None;
    let mut termination = Termination::MaxIterations;
    for it in 1..=opt.max_iters {
        if gn <= opt.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut s = match opt.strategy {
            StepStrategy::Fixed => opt.initial_step,
            StepStrategy::Armijo => (2.0 * s_prev).min(opt.initial_step.max(s_prev)),
            StepStrategy::BarzilaiBorwein => match &bb {
                Some((du, dg)) => {
                    let curv = du.inner(dg, mesh, tau);
                    if curv > 0.0 {
                        (du.inner(du, mesh, tau) / curv).clamp(1e-8, 1e8)
                    } else {
                        opt.initial_step
                    }
                }
                None => opt.initial_step,
            },
        };
        let mut accepted: Option<(ControlTriple, Evaluation)> = None;
        let tries = if opt.strategy == StepStrategy::Fixed { 1 } else { opt.max_backtracks };
        for _ in 0..tries {
            let trial = u.axpy(-s, &ev.gradient);
            if let Ok(te) = evaluate(cfg, &trial) {
                let sufficient = te.cost <= ev.cost - opt.c1 * s * gn * gn;
                let fixed_ok = opt.strategy == StepStrategy::Fixed && te.cost <= ev.cost;
                if sufficient || fixed_ok {
                    accepted = Some((trial, te));
                    break;
                }
            }
            s *= opt.backtrack;
        }
        let Some((nu, ne)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        bb = Some((nu.axpy(-1.0, &u), ne.gradient.axpy(-1.0, &ev.gradient)));
        u = nu;
        ev = ne;
        s_prev = s;
        gn = ev.gradient.norm(mesh, tau);
        history.push(HistoryRow { iter: it, eps, cost: ev.cost, grad_norm: gn, step: s, optimality_residual: gn });
    }
    if termination == Termination::MaxIterations && gn <= opt.grad_tol {
        termination = Termination::GradientTolerance;
    }
    Ok(OptResult {
        controls: u,
        state: ev.state,
        adjoint: ev.adjoint,
        gradient: ev.gradient,
        cost: ev.cost,
        history,
        termination,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub levels: Vec<f64>,
    pub opt: OptimizerConfig,
    /// |theta_x| at or below this counts as a facet when testing nu in Sgn(theta_x).
    pub facet_tol: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self { levels: vec![0.5, 0.25, 0.1, 0.05], opt: OptimizerConfig::default(), facet_tol: 1e-6 }
    }
}

impl ContinuationSchedule {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.opt.violations();
        if self.levels.is_empty() {
            v.push("continuation schedule is empty".into());
        }
        if self.levels.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            v.push("continuation levels must be nonnegative".into());
        }
        if self.levels.windows(2).any(|w| w[1] >= w[0]) {
            v.push("continuation levels must be strictly decreasing".into());
        }
        if !self.levels.iter().any(|e| *e > 0.0) {
            v.push("continuation needs at least one level with eps > 0".into());
        }
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub eps: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub optimality_residual: f64,
    pub termination: Option<Termination>,
    /// |J_eps(u) - J_prev(u)| at the warm-start controls.
    pub warm_start_gap: Option<f64>,
    /// |eps - eps_prev| * tau sum int abar: the scale of the Mosco bound.
    pub mosco_scale: Option<f64>,
    /// max over steps of the p-equation residual with |theta_x| in place of f_eps.
    pub limit_p_residual: Option<f64>,
    pub error: Option<String>,
}

/// Remainder functional of the limit z-equation on psi = t sin(k pi x).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ZetaSample {
    pub k: usize,
    pub remainder: f64,
    /// tau sum (A z_x, psi_x) at the last smooth level.
    pub eps_level: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitCertificate {
    pub eps: f64,
    /// [step i = 1..N][cell] f'_eps(theta_x).
    pub nu_field: Vec<Vec<f64>>,
    /// [step][cell] cell average of omega times z_x.
    pub xi_field: Vec<Vec<f64>>,
    pub sgn_residual: Vec<Vec<f64>>,
    pub sgn_residual_max: f64,
    pub nu_max_abs: f64,
    /// Per step; coupling written as alpha'(eta) times the average of f' z_x.
    pub p_residuals: Vec<f64>,
    /// Per step; coupling alpha'(eta) xi with xi = omega z_x taken literally.
    pub p_residuals_literal: Vec<f64>,
    pub zeta: Vec<ZetaSample>,
    pub optimality_residual: f64,
}

#[derive(Clone, Debug)]
pub struct ContinuationResult {
    pub controls: ControlTriple,
    /// State at the target eps with the final controls.
    pub state: StateTrajectory,
    pub levels: Vec<LevelReport>,
    pub history: Vec<HistoryRow>,
    pub certificate: LimitCertificate,
}

fn x_dual_norm(cfg: &ProblemConfig, r: &[f64]) -> f64 {
    let n = cfg.mesh.n_cells();
    r.iter()
        .enumerate()
        .map(|(j, v)| v * v / (cfg.mesh.weight(j) + if j == 0 || j == n { 1.0 } else { 0.0 }))
        .sum::<f64>()
        .sqrt()
}

/// Residuals of the limit p-equation along an eps-level solution, one per
/// adjoint step (consistent, literal).
pub fn limit_p_residuals(cfg: &ProblemConfig, state: &StateTrajectory, adj: &LinearTrajectory) -> (Vec<f64>, Vec<f64>) {
    let mesh = &cfg.mesh;
    let m = &cfg.material;
    let e = cfg.eps.value();
    let tau = cfg.grid.tau();
    let h = mesh.h();
    let n = mesh.n_cells();
    let forcing = tracking_forcing(cfg, state);
    let mut cons = vec![];
    let mut lit = vec![];
    for mi in 0..cfg.grid.steps() {
        let i = mi + 1;
        let s = &state.states[i];
        let eta = s.eta.bulk();
        let (p, pn) = (adj.steps[mi].p.bulk(), adj.steps[mi + 1].p.bulk());
        let z = &adj.steps[mi].z;
        let dp: Vec<f64> = p.iter().zip(pn).map(|(a, b)| (a - b) / tau).collect();
        let mut base = mesh.mass_apply(&dp);
        base[0] += dp[0];
        base[n] += dp[n];
        let k = mesh.stiffness_apply(p);
        let f0 = nodal_average(mesh, &cell_f(mesh, 0.0, &s.theta));
        let tx = diff_x(mesh, &s.theta);
        let zx = diff_x(mesh, z);
        let mh = mesh.mass_apply(&forcing.h[i]);
        for j in 0..=n {
            base[j] += k[j] + mesh.weight(j) * (m.g_prime(eta[j]) + m.alpha_double_prime(eta[j]) * f0[j]) * p[j] - mh[j];
        }
        base[0] -= forcing.h_gamma[i][0];
        base[n] -= forcing.h_gamma[i][1];
        let mut rc = base.clone();
        let mut rl = base;
        for c in 0..n {
            let q = fp(e, tx[c]) * zx[c];
            let xi = 0.5 * (m.alpha_prime(eta[c]) + m.alpha_prime(eta[c + 1])) * q;
            for j in [c, c + 1] {
                rc[j] += 0.5 * h * m.alpha_prime(eta[j]) * q;
                rl[j] += 0.5 * h * m.alpha_prime(eta[j]) * xi;
            }
        }
        cons.push(x_dual_norm(cfg, &rc));
        lit.push(x_dual_norm(cfg, &rl));
    }
    (cons, lit)
}

fn zeta_samples(cfg: &ProblemConfig, state: &StateTrajectory, adj: &LinearTrajectory) -> Result<Vec<ZetaSample>> {
    let mesh = &cfg.mesh;
    let m = &cfg.material;
    let e = cfg.eps.value();
    let tau = cfg.grid.tau();
    let h = mesh.h();
    let nu2 = cfg.nu * cfg.nu;
    let q = coeffs_from_state(cfg, state)?;
    let pi = std::f64::consts::PI;
    let mids = mesh.midpoints();
    let mut out = vec![];
    for k in 1..=4usize {
        let kp = k as f64 * pi;
        let (mut rem, mut lvl) = (0.0, 0.0);
        for mi in 0..cfg.grid.steps() {
            let i = mi + 1;
            let t = cfg.grid.t(mi);
            let s = &state.states[i];
            let eta = s.eta.bulk();
            let (p, z) = (adj.steps[mi].p.bulk(), &adj.steps[mi].z);
            let psi = mesh.sample(|x| t * (kp * x).sin());
            let psi_t = mesh.sample(|x| (kp * x).sin());
            let a0 = mesh.sample(|x| m.alpha0(t, x));
            let az: Vec<f64> = a0.iter().zip(z.iter()).map(|(a, b)| a * b).collect();
            let res: Vec<f64> = s.theta.iter().zip(&cfg.targets.theta_ad[i]).map(|(a, b)| cfg.weights.lambda * (a - b)).collect();
            let tx = diff_x(mesh, &s.theta);
            let zx = diff_x(mesh, z);
            let mut flux = 0.0;
            let mut afl = 0.0;
            for c in 0..mesh.n_cells() {
                let px = t * kp * (kp * mids[c]).cos();
                let ap = 0.5 * (m.alpha_prime(eta[c]) * p[c] + m.alpha_prime(eta[c + 1]) * p[c + 1]);
                flux += h * (nu2 * zx[c] + ap * fp(e, tx[c])) * px;
                afl += h * q.big_a[i][c] * zx[c] * px;
            }
            rem += dot(&res, &mesh.mass_apply(&psi)) - dot(&az, &mesh.mass_apply(&psi_t)) - flux;
            lvl += afl;
        }
        out.push(ZetaSample { k, remainder: tau * rem, eps_level: tau * lvl });
    }
    Ok(out)
}

/// Certificate for the limit system from the last smooth level `level_cfg`
/// (eps > 0) and the reference orientation field `theta_ref` (usually the
/// eps = 0 state at the same controls).
pub fn limit_certificate(
    level_cfg: &ProblemConfig,
    state: &StateTrajectory,
    adj: &LinearTrajectory,
    gradient: &GradientTriple,
    theta_ref: &StateTrajectory,
    facet_tol: f64,
) -> Result<LimitCertificate> {
    let mesh = &level_cfg.mesh;
    let e = level_cfg.eps.value();
    let q = coeffs_from_state(level_cfg, state)?;
    let mut cert = LimitCertificate {
        eps: e,
        nu_field: vec![],
        xi_field: vec![],
        sgn_residual: vec![],
        sgn_residual_max: 0.0,
        nu_max_abs: 0.0,
        p_residuals: vec![],
        p_residuals_literal: vec![],
        zeta: vec![],
        optimality_residual: gradient.norm(mesh, level_cfg.grid.tau()),
    };
    for i in 1..=level_cfg.grid.steps() {
        let tx = diff_x(mesh, &state.states[i].theta);
        let zx = diff_x(mesh, &adj.steps[i - 1].z);
        let rx = diff_x(mesh, &theta_ref.states[i].theta);
        let nu: Vec<f64> = tx.iter().map(|&d| fp(e, d)).collect();
        let xi: Vec<f64> = (0..mesh.n_cells()).map(|c| 0.5 * (q.omega[i][c][0] + q.omega[i][c][1]) * zx[c]).collect();
        let sr: Vec<f64> = nu
            .iter()
            .zip(&rx)
            .map(|(&n, &d)| sgn_residual(n, if d.abs() <= facet_tol { 0.0 } else { d }))
            .collect();
        cert.nu_max_abs = nu.iter().fold(cert.nu_max_abs, |a, b| a.max(b.abs()));
        cert.sgn_residual_max = sr.iter().fold(cert.sgn_residual_max, |a, &b| a.max(b));
        cert.nu_field.push(nu);
        cert.xi_field.push(xi);
        cert.sgn_residual.push(sr);
    }
    let (c, l) = limit_p_residuals(level_cfg, state, adj);
    cert.p_residuals = c;
    cert.p_residuals_literal = l;
    cert.zeta = zeta_samples(level_cfg, state, adj)?;
    Ok(cert)
}

/// tau sum over steps of int abar dx, the volume factor in the Mosco bound for J.
fn alpha_volume(cfg: &ProblemConfig, state: &StateTrajectory) -> f64 {
    let h = cfg.mesh.h();
    cfg.grid.tau()
        * state.states[1..]
            .iter()
            .map(|s| alpha_bar(&cfg.material, s.eta.bulk()).iter().sum::<f64>() * h)
            .sum::<f64>()
}

/// eps-continuation: solve each smooth level warm-started from the previous
/// one, then certify at the last smooth level.
pub fn solve_op0(cfg: &ProblemConfig, init: &ControlTriple, schedule: &ContinuationSchedule) -> Result<ContinuationResult> {
    let v = schedule.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut u = init.clone();
    let mut levels = vec![];
    let mut history = vec![];
    let mut last: Option<(ProblemConfig, OptResult)> = None;
    for &eps in schedule.levels.iter().filter(|e| **e > 0.0) {
        let lc = cfg.with_eps(Epsilon::new(eps)?);
        let prev_cost = last.as_ref().map(|(_, r)| r.cost);
        let prev_eps = last.as_ref().map(|(c, _)| c.eps.value());
        match solve_op(&lc, &u, &schedule.opt) {
            Ok(r) => {
                let start = &r.history[0];
                levels.push(LevelReport {
                    eps,
                    initial_cost: start.cost,
                    final_cost: r.cost,
                    iterations: r.history.len() - 1,
                    optimality_residual: r.history.last().map_or(f64::NAN, |h| h.optimality_residual),
                    termination: Some(r.termination.clone()),
                    warm_start_gap: prev_cost.map(|c| (start.cost - c).abs()),
                    mosco_scale: prev_eps.map(|pe| (pe - eps).abs() * alpha_volume(&lc, &r.state)),
                    limit_p_residual: Some(limit_p_residuals(&lc, &r.state, &r.adjoint).0.into_iter().fold(0.0, f64::max)),
                    error: None,
                });
                history.extend(r.history.iter().copied());
                u = r.controls.clone();
                last = Some((lc, r));
            }
            Err(e) => levels.push(LevelReport {
                eps,
                initial_cost: f64::NAN,
                final_cost: f64::NAN,
                iterations: 0,
                optimality_residual: f64::NAN,
                termination: None,
                warm_start_gap: None,
                mosco_scale: None,
                limit_p_residual: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((lc, r)) = last else {
        return Err(Error::Invalid("every continuation level failed".into()));
    };
    let state = solve_state(cfg, &cfg.init, &u)?;
    let certificate = limit_certificate(&lc, &r.state, &r.adjoint, &r.gradient, &state, schedule.facet_tol)?;
    Ok(ContinuationResult { controls: u, state, levels, history, certificate })
}
