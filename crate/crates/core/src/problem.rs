//! Problem data shared by the state, adjoint and optimization layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::MaterialModel;
use crate::mesh::{dot, BoundaryPair, BulkBoundaryFn, GridFn, GridFn0, Mesh1D, TimeGrid};
use crate::regularization::Epsilon;

/// (eta, eta_Gamma, theta); the boundary part of eta is carried by its end values.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTriple {
    pub eta: BulkBoundaryFn,
    pub theta: GridFn0,
}

impl StateTriple {
    pub fn zeros(mesh: &Mesh1D) -> Self {
        Self { eta: BulkBoundaryFn::zeros(mesh), theta: GridFn0::zeros(mesh) }
    }
}

/// Time sequence of controls on nodes 0..=N. Node 0 never enters the
/// dynamics or the cost; node i acts on the step (t_{i-1}, t_i].
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTriple {
    pub u: Vec<GridFn>,
    pub u_gamma: Vec<BoundaryPair>,
    pub v: Vec<GridFn>,
}

/// Gradient components (L(u+p), L_G(u_G+p_G), M(v+z)) in the control layout.
pub type GradientTriple = ControlTriple;

impl ControlTriple {
    pub fn zeros(mesh: &Mesh1D, grid: &TimeGrid) -> Self {
        let n = grid.steps() + 1;
        Self {
            u: vec![vec![0.0; mesh.n_nodes()]; n],
            u_gamma: vec![[0.0; 2]; n],
            v: vec![vec![0.0; mesh.n_nodes()]; n],
        }
    }

    /// Sample space-time functions on every node.
    pub fn from_fns(
        mesh: &Mesh1D,
        grid: &TimeGrid,
        u: impl Fn(f64, f64) -> f64,
        u_gamma: impl Fn(f64) -> BoundaryPair,
        v: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let times = grid.times();
        Self {
            u: times.iter().map(|&t| mesh.sample(|x| u(t, x))).collect(),
            u_gamma: times.iter().map(|&t| u_gamma(t)).collect(),
            v: times.iter().map(|&t| mesh.sample(|x| v(t, x))).collect(),
        }
    }

    pub fn check_shape(&self, mesh: &Mesh1D, grid: &TimeGrid) -> Result<()> {
        let n = grid.steps() + 1;
        if self.u.len() != n || self.u_gamma.len() != n || self.v.len() != n {
            return Err(Error::Dimension(format!(
                "control sequences need {n} time nodes, got {}/{}/{}",
                self.u.len(),
                self.u_gamma.len(),
                self.v.len()
            )));
        }
        for (a, b) in self.u.iter().zip(&self.v) {
            mesh.check_len(a, "control u")?;
            mesh.check_len(b, "control v")?;
        }
        Ok(())
    }

    /// Inner product of the control space: tau * sum over steps i = 1..N.
    pub fn inner(&self, other: &Self, mesh: &Mesh1D, tau: f64) -> f64 {
        let mut s = 0.0;
        for i in 1..self.u.len() {
            s += dot(&self.u[i], &mesh.mass_apply(&other.u[i]));
            s += self.u_gamma[i][0] * other.u_gamma[i][0] + self.u_gamma[i][1] * other.u_gamma[i][1];
            s += dot(&self.v[i], &mesh.mass_apply(&other.v[i]));
        }
        tau * s
    }

    pub fn norm(&self, mesh: &Mesh1D, tau: f64) -> f64 {
        self.inner(self, mesh, tau).max(0.0).sqrt()
    }

    /// self + a * other.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + a * q).collect::<Vec<_>>();
        Self {
            u: self.u.iter().zip(&other.u).map(|(x, y)| comb(x, y)).collect(),
            u_gamma: self
                .u_gamma
                .iter()
                .zip(&other.u_gamma)
                .map(|(x, y)| [x[0] + a * y[0], x[1] + a * y[1]])
                .collect(),
            v: self.v.iter().zip(&other.v).map(|(x, y)| comb(x, y)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        let s = |x: &GridFn| x.iter().map(|p| a * p).collect::<Vec<_>>();
        Self {
            u: self.u.iter().map(s).collect(),
            u_gamma: self.u_gamma.iter().map(|x| [a * x[0], a * x[1]]).collect(),
            v: self.v.iter().map(s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let m = |s: &[GridFn]| s.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
        m(&self.u).max(m(&self.v)).max(self.u_gamma.iter().flatten().fold(0.0, |a, &b| a.max(b.abs())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K_Gamma")]
    pub k_gamma: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_Gamma")]
    pub l_gamma: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

impl Weights {
    pub fn ones() -> Self {
        Self { k: 1.0, k_gamma: 1.0, lambda: 1.0, l: 1.0, l_gamma: 1.0, m: 1.0 }
    }

    pub fn violations(&self) -> Vec<String> {
        let named = [
            ("K", self.k),
            ("K_Gamma", self.k_gamma),
            ("Lambda", self.lambda),
            ("L", self.l),
            ("L_Gamma", self.l_gamma),
            ("M", self.m),
        ];
        named
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("cost weight {n} = {v} must be nonnegative (the cost functional J takes nonnegative weights)"))
            .collect()
    }
}

/// Tracking targets on nodes 0..=N.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub eta_ad: Vec<GridFn>,
    pub eta_gamma_ad: Vec<BoundaryPair>,
    pub theta_ad: Vec<GridFn>,
}

impl Targets {
    pub fn zeros(mesh: &Mesh1D, grid: &TimeGrid) -> Self {
        let n = grid.steps() + 1;
        Self {
            eta_ad: vec![vec![0.0; mesh.n_nodes()]; n],
            eta_gamma_ad: vec![[0.0; 2]; n],
            theta_ad: vec![vec![0.0; mesh.n_nodes()]; n],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCoupling {
    /// eta-step with the previous theta, then theta-step with the new eta.
    #[default]
    Split,
    /// Repeat the two substeps until they agree (fully implicit step).
    Converged,
}

/// What to do when tau exceeds the linear stability bound tau0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    /// Warn on [tau0, 2 tau0), refuse at 2 tau0 and above.
    #[default]
    Strict,
    /// Warn only.
    WarnOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub newton_max_iter: usize,
    pub newton_tol: f64,
    pub coupling: StepCoupling,
    pub coupling_max_iter: usize,
    pub coupling_tol: f64,
    /// Random directions used by the eps = 0 inequality check.
    pub vi_samples: usize,
    pub vi_tol: f64,
    /// Last level of the internal smoothing used when eps = 0.
    pub smoothing_floor: f64,
    /// Tau policy for linear solves driven by state coefficients.
    pub adjoint_tau_policy: TauPolicy,
    /// Energy shift R for diagnostics; None means R0.
    pub energy_r: Option<f64>,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_max_iter: 50,
            newton_tol: 1e-10,
            coupling: StepCoupling::Split,
            coupling_max_iter: 50,
            coupling_tol: 1e-11,
            vi_samples: 50,
            vi_tol: 1e-6,
            smoothing_floor: 1e-9,
            adjoint_tau_policy: TauPolicy::WarnOnly,
            energy_r: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemConfig {
    pub nu: f64,
    pub eps: Epsilon,
    pub weights: Weights,
    pub targets: Targets,
    pub material: MaterialModel,
    pub mesh: Mesh1D,
    pub grid: TimeGrid,
    pub init: StateTriple,
    pub solver: SolverOptions,
}

impl ProblemConfig {
    /// Zero targets, zero initial state, unit weights.
    pub fn new(mesh: Mesh1D, grid: TimeGrid, material: MaterialModel, nu: f64, eps: Epsilon) -> Self {
        Self {
            nu,
            eps,
            weights: Weights::ones(),
            targets: Targets::zeros(&mesh, &grid),
            init: StateTriple::zeros(&mesh),
            material,
            mesh,
            grid,
            solver: SolverOptions::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.weights.violations();
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            v.push(format!("nu = {} must be positive", self.nu));
        }
        let n = self.grid.steps() + 1;
        let t = &self.targets;
        if t.eta_ad.len() != n || t.eta_gamma_ad.len() != n || t.theta_ad.len() != n {
            v.push(format!("targets need {n} time nodes"));
        }
        let nn = self.mesh.n_nodes();
        if t.eta_ad.iter().chain(&t.theta_ad).any(|f| f.len() != nn) {
            v.push(format!("target grid functions need {nn} nodes"));
        }
        if self.init.eta.bulk().len() != nn || self.init.theta.len() != nn {
            v.push(format!("initial state needs {nn} nodes"));
        }
        let finite = |f: &[f64]| f.iter().all(|x| x.is_finite());
        if !t.eta_ad.iter().chain(&t.theta_ad).all(|f| finite(f))
            || !t.eta_gamma_ad.iter().all(|p| finite(p))
        {
            v.push("targets must be finite".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn with_eps(&self, eps: Epsilon) -> Self {
        let mut c = self.clone();
        c.eps = eps;
        c
    }
}
