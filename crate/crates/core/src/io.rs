//! Experiment configuration, orchestration and CSV export.
//!
//! A run is described by one JSON document ([`ExperimentSpec`]). Physical
//! inputs are either catalog functions with parameters or inline tables, so a
//! resolved config reproduces the run on its own.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adjoint::{cost, evaluate};
use crate::benchmarks::{facet_benchmark, inverse_crime, smooth_benchmark, staircase};
use crate::error::{Error, Result};
use crate::linear::{check_apriori, constants, solve_P, tau0, CoefficientQuintet, ForcingTriple, LinearTriple};
use crate::material::builtin;
use crate::mesh::{BoundaryPair, BulkBoundaryFn, GridFn, GridFn0, MassKind, Mesh1D, TimeGrid};
use crate::optimizer::{solve_op, solve_op0, ContinuationSchedule, HistoryRow, OptimizerConfig};
use crate::problem::{ControlTriple, ProblemConfig, SolverOptions, StateTriple, TauPolicy, Targets, Weights};
use crate::regularization::Epsilon;
use crate::state::{frozen_tau0, solve_state, StateTrajectory};
use crate::verify::{run_suite, ManufacturedP, Status, SuiteOptions, VerifyRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    State,
    Linear,
    Adjoint,
    Optimize,
    Continuation,
    Verify,
}

/// Reference problems that fix the material, nu, eps, initial data, weights
/// and targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Smooth,
    InverseCrime,
    Facet,
}

impl Benchmark {
    fn name(self) -> &'static str {
        match self {
            Self::Smooth => "smooth",
            Self::InverseCrime => "inverse-crime",
            Self::Facet => "facet",
        }
    }

    fn default_t_final(self) -> f64 {
        match self {
            Self::Smooth => 0.5,
            Self::InverseCrime => 8.0,
            Self::Facet => 0.5,
        }
    }

    /// None: the horizon is part of the benchmark.
    fn free_horizon(self) -> bool {
        matches!(self, Self::InverseCrime)
    }

    fn default_steps(self) -> usize {
        match self {
            Self::Smooth => 32,
            Self::InverseCrime => 40,
            Self::Facet => 20,
        }
    }

    fn build(self, cells: usize, grid: &TimeGrid) -> Result<ProblemConfig> {
        match self {
            Self::Smooth => smooth_benchmark(cells, grid.steps()),
            Self::InverseCrime => inverse_crime(cells, grid.steps(), grid.t_final()).map(|(c, _)| c),
            Self::Facet => facet_benchmark(cells, grid.steps()),
        }
    }
}

pub const FIELD_CATALOG: [&str; 6] = ["zero", "constant", "sin", "cos", "poly", "staircase"];

/// A function of (t, x): a catalog entry, or nodal values given either as a
/// single row (constant in time) or one row per time node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
    Table {
        values: Vec<Vec<f64>>,
    },
}

type SpaceTime = Box<dyn Fn(f64, f64) -> f64>;

impl FieldSpec {
    pub fn builtin(name: &str, params: &[(&str, f64)]) -> Self {
        Self::Builtin { builtin: name.into(), params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    pub fn zero() -> Self {
        Self::builtin("zero", &[])
    }

    fn function(name: &str, params: &BTreeMap<String, f64>) -> std::result::Result<SpaceTime, String> {
        let known: &[(&str, f64)] = match name {
            "zero" => &[],
            "constant" => &[("value", 0.0)],
            "sin" | "cos" => &[("amp", 1.0), ("k", 1.0), ("phase", 0.0), ("rate", 0.0)],
            "poly" => &[("c0", 0.0), ("c1", 0.0), ("c2", 0.0), ("ct", 0.0)],
            "staircase" => &[("amp", 1.0)],
            other => return Err(format!("unknown field '{other}'; available: {}", FIELD_CATALOG.join(", "))),
        };
        let mut p: BTreeMap<&str, f64> = known.iter().copied().collect();
        for (k, v) in params {
            match p.get_mut(k.as_str()) {
                Some(slot) if v.is_finite() => *slot = *v,
                Some(_) => return Err(format!("field '{name}' parameter '{k}' must be finite")),
                None => {
                    let names: Vec<&str> = known.iter().map(|(n, _)| *n).collect();
                    return Err(format!("field '{name}' has no parameter '{k}' (known: {})", names.join(", ")));
                }
            }
        }
        let g = |k: &str| p[k];
        Ok(match name {
            "zero" => Box::new(|_, _| 0.0),
            "constant" => {
                let c = g("value");
                Box::new(move |_, _| c)
            }
            "sin" | "cos" => {
                let (amp, k, ph, rate) = (g("amp"), g("k"), g("phase"), g("rate"));
                let trig = if name == "sin" { f64::sin } else { f64::cos };
                Box::new(move |t, x| amp * trig(k * PI * x + ph) * (1.0 + rate * t))
            }
            "poly" => {
                let (c0, c1, c2, ct) = (g("c0"), g("c1"), g("c2"), g("ct"));
                Box::new(move |t, x| c0 + c1 * x + c2 * x * x + ct * t)
            }
            _ => {
                let amp = g("amp");
                Box::new(move |_, x| amp * staircase(x))
            }
        })
    }

    fn problems(&self, what: &str) -> Vec<String> {
        match self {
            Self::Builtin { builtin, params } => match Self::function(builtin, params) {
                Ok(_) => vec![],
                Err(e) => vec![format!("{what}: {e}")],
            },
            Self::Table { values } => {
                if values.is_empty() {
                    vec![format!("{what}: table has no rows")]
                } else if values.iter().flatten().any(|v| !v.is_finite()) {
                    vec![format!("{what}: table values must be finite")]
                } else {
                    vec![]
                }
            }
        }
    }

    /// Values on every time node.
    fn on_nodes(&self, mesh: &Mesh1D, times: &[f64], what: &str) -> Result<Vec<GridFn>> {
        match self {
            Self::Builtin { builtin, params } => {
                let f = Self::function(builtin, params).map_err(|e| Error::config(format!("{what}: {e}")))?;
                Ok(times.iter().map(|&t| mesh.sample(|x| f(t, x))).collect())
            }
            Self::Table { values } => {
                let nn = mesh.n_nodes();
                if values.iter().any(|r| r.len() != nn) {
                    return Err(Error::config(format!(
                        "{what}: table rows need {nn} values ({} cells)",
                        mesh.n_cells()
                    )));
                }
                match values.len() {
                    1 => Ok(vec![values[0].clone(); times.len()]),
                    n if n == times.len() => Ok(values.clone()),
                    n => Err(Error::config(format!("{what}: table needs 1 or {} rows, got {n}", times.len()))),
                }
            }
        }
    }

    fn at_start(&self, mesh: &Mesh1D, what: &str) -> Result<GridFn> {
        match self {
            Self::Table { values } if values.len() > 1 => Err(Error::config(format!("{what}: initial data takes one row"))),
            _ => Ok(self.on_nodes(mesh, &[0.0], what)?.remove(0)),
        }
    }

    fn vanishing_at_start(&self, mesh: &Mesh1D, what: &str) -> Result<GridFn0> {
        let v = self.at_start(mesh, what)?;
        if v[0].abs() > 1e-12 || v[v.len() - 1].abs() > 1e-12 {
            return Err(Error::config(format!("{what} must vanish at x = 0 and x = 1")));
        }
        Ok(GridFn0::from_interior(&v[1..v.len() - 1]))
    }
}

/// Boundary pair sequence: one pair for all times or one per time node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundarySpec {
    Constant(BoundaryPair),
    Table(Vec<BoundaryPair>),
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::Constant([0.0; 2])
    }
}

impl BoundarySpec {
    fn on_nodes(&self, n: usize, what: &str) -> Result<Vec<BoundaryPair>> {
        let v = match self {
            Self::Constant(p) => vec![*p; n],
            Self::Table(t) if t.len() == 1 => vec![t[0]; n],
            Self::Table(t) if t.len() == n => t.clone(),
            Self::Table(t) => {
                return Err(Error::config(format!("{what}: table needs 1 or {n} pairs, got {}", t.len())))
            }
        };
        if v.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("{what}: values must be finite")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self { name: "default".into(), params: BTreeMap::new() }
    }
}

/// Initial state; the boundary values of eta are its end values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub eta: FieldSpec,
    pub theta: FieldSpec,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            eta: FieldSpec::builtin("cos", &[("amp", 0.3)]),
            theta: FieldSpec::builtin("sin", &[("amp", 0.8)]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    pub u: FieldSpec,
    pub u_gamma: BoundarySpec,
    pub v: FieldSpec,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self { u: FieldSpec::zero(), u_gamma: BoundarySpec::default(), v: FieldSpec::zero() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub eta: FieldSpec,
    pub eta_gamma: BoundarySpec,
    pub theta: FieldSpec,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { eta: FieldSpec::zero(), eta_gamma: BoundarySpec::default(), theta: FieldSpec::zero() }
    }
}

/// Coefficients, forcing and initial data of a linear run. omega is sampled
/// at the nodes and A at the cell midpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomLinear {
    pub a: FieldSpec,
    pub b: FieldSpec,
    pub mu: FieldSpec,
    pub omega: FieldSpec,
    pub big_a: FieldSpec,
    pub h: FieldSpec,
    pub h_gamma: BoundarySpec,
    pub k: FieldSpec,
    pub p0: FieldSpec,
    pub z0: FieldSpec,
}

impl Default for CustomLinear {
    fn default() -> Self {
        Self {
            a: FieldSpec::builtin("constant", &[("value", 1.0)]),
            b: FieldSpec::zero(),
            mu: FieldSpec::builtin("constant", &[("value", 0.5)]),
            omega: FieldSpec::zero(),
            big_a: FieldSpec::zero(),
            h: FieldSpec::builtin("sin", &[]),
            h_gamma: BoundarySpec::default(),
            k: FieldSpec::zero(),
            p0: FieldSpec::builtin("cos", &[]),
            z0: FieldSpec::builtin("sin", &[]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LinearSpec {
    Manufactured { family: ManufacturedP },
    Custom(CustomLinear),
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self::Manufactured { family: ManufacturedP::TimeDependent }
    }
}

/// One experiment. `Option` fields are filled in by [`ExperimentSpec::resolve`];
/// fields fixed by a benchmark stay empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<Benchmark>,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default)]
    pub mass: MassKind,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSpec>,
    #[serde(default)]
    pub controls: ControlSpec,
    #[serde(default)]
    pub linear: LinearSpec,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub continuation: ContinuationSchedule,
    #[serde(default)]
    pub verify: SuiteOptions,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_cells() -> usize {
    64
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied before defaults are materialized.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub cells: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(mode: Mode) -> Self {
        serde_json::from_value(json!({ "mode": mode })).expect("minimal config deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.tau {
            self.tau = Some(t);
        }
        if let Some(n) = o.cells {
            self.cells = n;
        }
    }

    /// Every problem with the config that can be detected without solving.
    pub fn violations(&self) -> Vec<String> {
        let mut v = vec![];
        if self.cells < 2 {
            v.push(format!("cells = {} must be at least 2", self.cells));
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0 && t.is_finite()) {
                v.push(format!("t_final = {t} must be positive"));
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                v.push(format!("tau = {t} must lie in (0, 1)"));
            }
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu.is_finite()) {
                v.push(format!("nu = {nu} must be positive"));
            }
        }
        if let Some(e) = self.eps {
            if !(e >= 0.0 && e.is_finite()) {
                v.push(format!("eps = {e} must be finite and nonnegative"));
            }
        }
        if let Some(w) = &self.weights {
            v.extend(w.violations());
        }
        if let Some(m) = &self.material {
            if let Err(Error::Config(errs)) = builtin(&m.name, &m.params) {
                v.extend(errs);
            }
        }
        if let Some(i) = &self.init {
            v.extend(i.eta.problems("init.eta"));
            v.extend(i.theta.problems("init.theta"));
        }
        if let Some(t) = &self.targets {
            v.extend(t.eta.problems("targets.eta"));
            v.extend(t.theta.problems("targets.theta"));
        }
        v.extend(self.controls.u.problems("controls.u"));
        v.extend(self.controls.v.problems("controls.v"));
        if let LinearSpec::Custom(c) = &self.linear {
            for (f, n) in [
                (&c.a, "a"),
                (&c.b, "b"),
                (&c.mu, "mu"),
                (&c.omega, "omega"),
                (&c.big_a, "big_a"),
                (&c.h, "h"),
                (&c.k, "k"),
                (&c.p0, "p0"),
                (&c.z0, "z0"),
            ] {
                v.extend(f.problems(&format!("linear.{n}")));
            }
        }
        v.extend(self.optimizer.violations());
        if self.mode == Mode::Continuation {
            v.extend(self.continuation.violations());
        }
        if let Some(b) = self.benchmark {
            if self.mode == Mode::Linear {
                v.push("benchmarks do not apply to linear mode".into());
            }
            let fixed = [
                ("nu", self.nu.is_some()),
                ("eps", self.eps.is_some()),
                ("material", self.material.is_some()),
                ("weights", self.weights.is_some()),
                ("init", self.init.is_some()),
                ("targets", self.targets.is_some()),
            ];
            for (name, set) in fixed {
                if set {
                    v.push(format!("'{name}' is fixed by benchmark '{}'", b.name()));
                }
            }
            if let Some(t) = self.t_final {
                if !b.free_horizon() && t != b.default_t_final() {
                    v.push(format!("benchmark '{}' has the fixed horizon t_final = {}", b.name(), b.default_t_final()));
                }
            }
        }
        let eps = self.eps.unwrap_or(match self.benchmark {
            Some(Benchmark::Facet) => 0.0,
            _ => 0.1,
        });
        if matches!(self.mode, Mode::Adjoint | Mode::Optimize) && eps == 0.0 {
            v.push(format!("{:?} mode needs eps > 0; use continuation mode for eps = 0", self.mode).to_lowercase());
        }
        v
    }

    /// Materialize every default (including tau = tau0 / 2) and check that
    /// the problem can be built.
    pub fn resolve(&self) -> Result<Self> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let mut s = self.clone();
        match s.benchmark {
            Some(b) => {
                s.t_final.get_or_insert(b.default_t_final());
                s.tau.get_or_insert(b.default_t_final() / b.default_steps() as f64);
            }
            None if s.mode == Mode::Linear => {
                s.t_final.get_or_insert(1.0);
                s.nu.get_or_insert(1.0);
                if s.tau.is_none() {
                    let (mesh, grid) = s.provisional_grid()?;
                    let q = s.linear_data(&mesh, &grid)?.1;
                    s.tau = Some(default_tau(tau0(&q, s.nu.unwrap_or(1.0)), grid.t_final()));
                }
            }
            None => {
                s.t_final.get_or_insert(0.5);
                s.nu.get_or_insert(1.0);
                s.eps.get_or_insert(0.1);
                s.material.get_or_insert_with(MaterialSpec::default);
                s.weights.get_or_insert_with(Weights::ones);
                s.init.get_or_insert_with(InitSpec::default);
                s.targets.get_or_insert_with(TargetSpec::default);
                if s.tau.is_none() {
                    let (mesh, grid) = s.provisional_grid()?;
                    let cfg = s.problem_on(mesh, grid)?;
                    s.tau = Some(default_tau(frozen_tau0(&cfg, &cfg.init), grid.t_final()));
                }
            }
        }
        let mut solver = match (s.solver.take(), s.benchmark) {
            (Some(o), _) => o,
            (None, Some(b)) => b.build(2, &TimeGrid::from_steps(b.default_t_final(), b.default_steps())?)?.solver,
            (None, None) => SolverOptions::default(),
        };
        solver.seed = s.seed;
        s.solver = Some(solver);
        if s.mode == Mode::Linear {
            let (mesh, grid) = s.grid()?;
            s.linear_data(&mesh, &grid)?;
        } else {
            let cfg = s.problem()?;
            s.controls(&cfg)?;
        }
        Ok(s)
    }

    fn mesh(&self) -> Result<Mesh1D> {
        Ok(Mesh1D::new(self.cells)?.with_mass(self.mass))
    }

    fn provisional_grid(&self) -> Result<(Mesh1D, TimeGrid)> {
        let t = self.t_final.unwrap_or(1.0);
        Ok((self.mesh()?, TimeGrid::from_steps(t, t.ceil() as usize + 1)?))
    }

    pub fn grid(&self) -> Result<(Mesh1D, TimeGrid)> {
        let t = self.t_final.ok_or_else(|| Error::config("t_final is not resolved"))?;
        let tau = self.tau.ok_or_else(|| Error::config("tau is not resolved"))?;
        Ok((self.mesh()?, TimeGrid::new(t, tau)?))
    }

    fn problem_on(&self, mesh: Mesh1D, grid: TimeGrid) -> Result<ProblemConfig> {
        if let Some(b) = self.benchmark {
            let mut cfg = b.build(self.cells, &grid)?;
            cfg.mesh = cfg.mesh.with_mass(self.mass);
            if let Some(o) = &self.solver {
                cfg.solver = o.clone();
            }
            return Ok(cfg);
        }
        let m = self.material.clone().unwrap_or_default();
        let material = builtin(&m.name, &m.params)?;
        let mut cfg = ProblemConfig::new(mesh, grid, material, self.nu.unwrap_or(1.0), Epsilon::new(self.eps.unwrap_or(0.1))?);
        cfg.weights = self.weights.unwrap_or_else(Weights::ones);
        let init = self.init.clone().unwrap_or_default();
        cfg.init = StateTriple {
            eta: BulkBoundaryFn::from_bulk(init.eta.at_start(&cfg.mesh, "init.eta")?),
            theta: init.theta.vanishing_at_start(&cfg.mesh, "init.theta")?,
        };
        let tg = self.targets.clone().unwrap_or_default();
        let times = cfg.grid.times();
        cfg.targets = Targets {
            eta_ad: tg.eta.on_nodes(&cfg.mesh, &times, "targets.eta")?,
            eta_gamma_ad: tg.eta_gamma.on_nodes(times.len(), "targets.eta_gamma")?,
            theta_ad: tg.theta.on_nodes(&cfg.mesh, &times, "targets.theta")?,
        };
        if let Some(o) = &self.solver {
            cfg.solver = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The problem of a resolved config.
    pub fn problem(&self) -> Result<ProblemConfig> {
        let (mesh, grid) = self.grid()?;
        self.problem_on(mesh, grid)
    }

    pub fn controls(&self, cfg: &ProblemConfig) -> Result<ControlTriple> {
        let times = cfg.grid.times();
        let c = ControlTriple {
            u: self.controls.u.on_nodes(&cfg.mesh, &times, "controls.u")?,
            u_gamma: self.controls.u_gamma.on_nodes(times.len(), "controls.u_gamma")?,
            v: self.controls.v.on_nodes(&cfg.mesh, &times, "controls.v")?,
        };
        c.check_shape(&cfg.mesh, &cfg.grid)?;
        Ok(c)
    }

    fn linear_data(&self, mesh: &Mesh1D, grid: &TimeGrid) -> Result<(LinearTriple, CoefficientQuintet, ForcingTriple)> {
        match &self.linear {
            LinearSpec::Manufactured { family } => {
                Ok((family.init(mesh), family.quintet(mesh, grid)?, family.forcing(mesh, grid)))
            }
            LinearSpec::Custom(c) => {
                let times = grid.times();
                let n = |f: &FieldSpec, w: &str| f.on_nodes(mesh, &times, w);
                let omega_nodes = n(&c.omega, "linear.omega")?;
                let omega = omega_nodes.iter().map(|w| w.windows(2).map(|p| [p[0], p[1]]).collect()).collect();
                let mids: Vec<f64> = mesh.midpoints();
                let big_a = match &c.big_a {
                    FieldSpec::Builtin { builtin, params } => {
                        let f = FieldSpec::function(builtin, params).map_err(Error::config)?;
                        times.iter().map(|&t| mids.iter().map(|&x| f(t, x)).collect()).collect()
                    }
                    FieldSpec::Table { .. } => n(&c.big_a, "linear.big_a")?
                        .into_iter()
                        .map(|row| row.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect())
                        .collect(),
                };
                let q = CoefficientQuintet::from_samples(
                    mesh,
                    grid,
                    n(&c.a, "linear.a")?,
                    n(&c.b, "linear.b")?,
                    n(&c.mu, "linear.mu")?,
                    omega,
                    big_a,
                )?;
                let forcing = ForcingTriple {
                    h: n(&c.h, "linear.h")?,
                    h_gamma: c.h_gamma.on_nodes(times.len(), "linear.h_gamma")?,
                    k: n(&c.k, "linear.k")?,
                };
                let init = LinearTriple {
                    p: BulkBoundaryFn::from_bulk(c.p0.at_start(mesh, "linear.p0")?),
                    z: c.z0.vanishing_at_start(mesh, "linear.z0")?,
                };
                Ok((init, q, forcing))
            }
        }
    }
}

/// tau0 / 2, capped so that there is at least one step and tau < 1.
fn default_tau(tau0: f64, t_final: f64) -> f64 {
    (0.5 * tau0).min(t_final).min(0.5)
}

/// Read, parse and resolve a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    load_config(path)?.resolve()
}

/// Read and parse without materializing defaults.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// How a run ended; maps onto the process exit status.
#[derive(Debug)]
pub enum RunError {
    Config(Error),
    Solver(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Solver(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub mode: Mode,
    pub config: ExperimentSpec,
    pub outputs: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub summary: Value,
}

struct Recorder {
    dir: PathBuf,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
    warnings: Vec<String>,
}

impl Recorder {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.into());
        self.dir.join(name)
    }

    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let r = f();
        self.timings.insert(phase.into(), t.elapsed().as_secs_f64());
        r
    }
}

/// Run a resolved config and write its outputs. On solver failure an
/// `error.txt` with the diagnostic is left in the output directory.
pub fn run(spec: &ExperimentSpec) -> std::result::Result<Manifest, RunError> {
    let spec = spec.resolve().map_err(RunError::Config)?;
    fs::create_dir_all(&spec.out)
        .map_err(|e| RunError::Solver(format!("cannot create {}: {e}", spec.out.display())))?;
    let error_file = spec.out.join("error.txt");
    let _ = fs::remove_file(&error_file);
    let start = Instant::now();
    let mut rec = Recorder { dir: spec.out.clone(), outputs: vec![], timings: BTreeMap::new(), warnings: vec![] };
    let outcome = execute(&spec, &mut rec);
    rec.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let (summary, failure) = match outcome {
        Ok(s) => {
            let failure = s.get("failed_checks").and_then(Value::as_array).filter(|a| !a.is_empty()).map(|a| {
                let names: Vec<&str> = a.iter().filter_map(Value::as_str).collect();
                format!("verification checks failed: {}", names.join(", "))
            });
            (s, failure)
        }
        Err(e) => (json!({ "error": e.to_string() }), Some(e.to_string())),
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        mode: spec.mode,
        config: spec.clone(),
        outputs: rec.outputs,
        timings: rec.timings,
        warnings: rec.warnings,
        summary,
    };
    let write = || -> Result<()> {
        fs::write(spec.out.join("resolved_config.json"), spec.to_json())?;
        fs::write(spec.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    };
    write().map_err(|e| RunError::Solver(e.to_string()))?;
    match failure {
        None => Ok(manifest),
        Some(msg) => {
            let _ = fs::write(&error_file, format!("{msg}\n"));
            Err(RunError::Solver(msg))
        }
    }
}

fn execute(spec: &ExperimentSpec, rec: &mut Recorder) -> Result<Value> {
    if spec.mode == Mode::Linear {
        return run_linear(spec, rec);
    }
    let cfg = rec.time("setup", || spec.problem())?;
    let controls = spec.controls(&cfg)?;
    match spec.mode {
        Mode::State => {
            let tr = rec.time("solve", || solve_state(&cfg, &cfg.init, &controls))?;
            rec.warnings.extend(tr.warnings.iter().cloned());
            write_state(rec, &cfg, &tr)?;
            Ok(json!({
                "steps": cfg.grid.steps(),
                "cost": cost(&cfg, &tr, &controls),
                "final_energy": tr.energy.last().map(|e| e.total()),
            }))
        }
        Mode::Adjoint => {
            let ev = rec.time("solve", || evaluate(&cfg, &controls))?;
            rec.warnings.extend(ev.state.warnings.iter().cloned());
            rec.warnings.extend(ev.adjoint.warnings.iter().cloned());
            write_state(rec, &cfg, &ev.state)?;
            let times = cfg.grid.times();
            let (p, z, pg) = linear_columns(&ev.adjoint.steps);
            write_nodal(&rec.path("adjoint.csv"), ["t", "x", "p", "z"], &times, &cfg.mesh, &p, &z)?;
            write_pairs(&rec.path("adjoint_boundary.csv"), ["t", "p_Gamma_0", "p_Gamma_1"], &times, &pg)?;
            write_controls(rec, "gradient", ["g_u", "g_v", "g_u_Gamma_0", "g_u_Gamma_1"], &cfg, &ev.gradient)?;
            Ok(json!({
                "steps": cfg.grid.steps(),
                "cost": ev.cost,
                "gradient_norm": ev.gradient.norm(&cfg.mesh, cfg.grid.tau()),
            }))
        }
        Mode::Optimize => {
            let r = rec.time("solve", || solve_op(&cfg, &controls, &spec.optimizer))?;
            write_history(&rec.path("history.csv"), &r.history)?;
            write_state(rec, &cfg, &r.state)?;
            write_controls(rec, "controls", ["u", "v", "u_Gamma_0", "u_Gamma_1"], &cfg, &r.controls)?;
            let h0 = &r.history[0];
            Ok(json!({
                "iterations": r.history.len() - 1,
                "termination": r.termination,
                "initial_cost": h0.cost,
                "final_cost": r.cost,
                "initial_optimality_residual": h0.optimality_residual,
                "final_optimality_residual": r.history.last().map(|h| h.optimality_residual),
            }))
        }
        Mode::Continuation => {
            let r = rec.time("solve", || solve_op0(&cfg, &controls, &spec.continuation))?;
            write_history(&rec.path("history.csv"), &r.history)?;
            write_state(rec, &cfg, &r.state)?;
            write_controls(rec, "controls", ["u", "v", "u_Gamma_0", "u_Gamma_1"], &cfg, &r.controls)?;
            let c = &r.certificate;
            write_certificate(&rec.path("certificate.csv"), &cfg, &c.nu_field, &c.xi_field, &c.sgn_residual)?;
            write_levels(&rec.path("levels.csv"), &r.levels)?;
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            Ok(json!({
                "levels": r.levels,
                "certificate": {
                    "eps": c.eps,
                    "nu_max_abs": c.nu_max_abs,
                    "sgn_residual_max": c.sgn_residual_max,
                    "limit_p_residual_max": max(&c.p_residuals),
                    "limit_p_residual_literal_max": max(&c.p_residuals_literal),
                    "zeta": c.zeta,
                    "optimality_residual": c.optimality_residual,
                },
            }))
        }
        Mode::Verify => {
            let rows = rec.time("suite", || run_suite(&cfg, &controls, spec.seed, &spec.verify));
            write_verify_report(&rec.path("verify_report.csv"), &rows)?;
            let failed: Vec<&str> = rows.iter().filter(|r| r.status == Status::Fail).map(|r| r.check.as_str()).collect();
            Ok(json!({ "checks": rows.len(), "failed_checks": failed }))
        }
        Mode::Linear => unreachable!("handled above"),
    }
}

fn run_linear(spec: &ExperimentSpec, rec: &mut Recorder) -> Result<Value> {
    let (mesh, grid) = spec.grid()?;
    let nu = spec.nu.unwrap_or(1.0);
    let (init, q, forcing) = spec.linear_data(&mesh, &grid)?;
    let tr = rec.time("solve", || solve_P(&mesh, &grid, &init, &q, &forcing, nu, TauPolicy::Strict))?;
    rec.warnings.extend(tr.warnings.iter().cloned());
    let consts = constants(&q, nu, grid.t_final());
    let rep = check_apriori(&mesh, &grid, &tr, &q, &forcing, &consts, nu);
    let times = grid.times();
    let (p, z, pg) = linear_columns(&tr.steps);
    write_nodal(&rec.path("linear_trajectory.csv"), ["t", "x", "p", "z"], &times, &mesh, &p, &z)?;
    write_pairs(&rec.path("linear_boundary.csv"), ["t", "p_Gamma_0", "p_Gamma_1"], &times, &pg)?;
    let mut summary = json!({
        "steps": grid.steps(),
        "tau0": tr.tau0,
        "apriori_passed": rep.passed,
        "apriori_worst_step_margin": rep.worst_step_margin(),
    });
    if let LinearSpec::Manufactured { family } = &spec.linear {
        let t = grid.t_final();
        let last = &tr.steps[grid.steps()];
        summary["error_p"] = json!(mesh.l2_error(last.p.bulk(), |x| family.exact_p(t, x)));
        summary["error_z"] = json!(mesh.l2_error(&last.z, |x| family.exact_z(t, x)));
    }
    Ok(summary)
}

fn linear_columns(steps: &[LinearTriple]) -> (Vec<GridFn>, Vec<GridFn>, Vec<BoundaryPair>) {
    (
        steps.iter().map(|s| s.p.bulk().to_vec()).collect(),
        steps.iter().map(|s| s.z.to_vec()).collect(),
        steps.iter().map(|s| s.p.boundary()).collect(),
    )
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// One row per (t_i, x_j).
pub fn write_nodal(path: &Path, header: [&str; 4], times: &[f64], mesh: &Mesh1D, a: &[GridFn], b: &[GridFn]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    let xs = mesh.nodes();
    for (i, &t) in times.iter().enumerate() {
        for (j, &x) in xs.iter().enumerate() {
            w.write_record([num(t), num(x), num(a[i][j]), num(b[i][j])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs(path: &Path, header: [&str; 3], times: &[f64], pairs: &[BoundaryPair]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for (t, p) in times.iter().zip(pairs) {
        w.write_record([num(*t), num(p[0]), num(p[1])])?;
    }
    w.flush()?;
    Ok(())
}

/// trajectory.csv, boundary.csv and energy.csv.
fn write_state(rec: &mut Recorder, cfg: &ProblemConfig, tr: &StateTrajectory) -> Result<()> {
    let times = cfg.grid.times();
    let eta: Vec<GridFn> = tr.states.iter().map(|s| s.eta.bulk().to_vec()).collect();
    let theta: Vec<GridFn> = tr.states.iter().map(|s| s.theta.to_vec()).collect();
    let gamma: Vec<BoundaryPair> = tr.states.iter().map(|s| s.eta.boundary()).collect();
    write_nodal(&rec.path("trajectory.csv"), ["t", "x", "eta", "theta"], &times, &cfg.mesh, &eta, &theta)?;
    write_pairs(&rec.path("boundary.csv"), ["t", "eta_Gamma_0", "eta_Gamma_1"], &times, &gamma)?;
    let mut w = writer(&rec.path("energy.csv"))?;
    w.write_record(["t", "phi", "ghat", "work", "dissipation"])?;
    for e in &tr.energy {
        w.write_record([num(e.t), num(e.phi), num(e.ghat), num(e.work), num(e.dissipation)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_controls(
    rec: &mut Recorder,
    stem: &str,
    names: [&str; 4],
    cfg: &ProblemConfig,
    c: &ControlTriple,
) -> Result<()> {
    let times = cfg.grid.times();
    write_nodal(&rec.path(&format!("{stem}.csv")), ["t", "x", names[0], names[1]], &times, &cfg.mesh, &c.u, &c.v)?;
    write_pairs(&rec.path(&format!("{stem}_boundary.csv")), ["t", names[2], names[3]], &times, &c.u_gamma)
}

pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "eps", "cost", "grad_norm", "step", "optimality_residual"])?;
    for h in history {
        w.write_record([h.iter.to_string(), num(h.eps), num(h.cost), num(h.grad_norm), num(h.step), num(h.optimality_residual)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (t_i, cell midpoint), steps i = 1..N.
pub fn write_certificate(
    path: &Path,
    cfg: &ProblemConfig,
    nu: &[Vec<f64>],
    xi: &[Vec<f64>],
    sgn: &[Vec<f64>],
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "x", "nu_circ", "xi_circ", "sgn_residual"])?;
    let mids = cfg.mesh.midpoints();
    for i in 0..nu.len() {
        let t = cfg.grid.t(i + 1);
        for (c, &x) in mids.iter().enumerate() {
            w.write_record([num(t), num(x), num(nu[i][c]), num(xi[i][c]), num(sgn[i][c])])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_levels(path: &Path, levels: &[crate::optimizer::LevelReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "eps",
        "initial_cost",
        "final_cost",
        "iterations",
        "optimality_residual",
        "warm_start_gap",
        "mosco_scale",
        "limit_p_residual",
        "termination",
    ])?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    for l in levels {
        let term = match (&l.termination, &l.error) {
            (Some(t), _) => format!("{t:?}"),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => String::new(),
        };
        w.write_record([
            num(l.eps),
            num(l.initial_cost),
            num(l.final_cost),
            l.iterations.to_string(),
            num(l.optimality_residual),
            opt(l.warm_start_gap),
            opt(l.mosco_scale),
            opt(l.limit_p_residual),
            term,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verify_report(path: &Path, rows: &[VerifyRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["check", "status", "margin", "tolerance"])?;
    for r in rows {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        };
        w.write_record([r.check.clone(), status.into(), num(r.margin), num(r.tolerance)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::CATALOG;

    #[test]
    fn minimal_state_config_materializes_defaults() {
        let s = ExperimentSpec::from_json(r#"{"mode": "state"}"#).unwrap().resolve().unwrap();
        assert_eq!(s.cells, 64);
        assert_eq!(s.t_final, Some(0.5));
        let cfg = s.problem().unwrap();
        let mut probe = s.clone();
        probe.tau = None;
        let (mesh, grid) = probe.provisional_grid().unwrap();
        let t0 = frozen_tau0(&probe.problem_on(mesh, grid).unwrap(), &cfg.init);
        assert_eq!(s.tau, Some(default_tau(t0, 0.5)));
        assert!(cfg.grid.tau() < t0);
        assert_eq!(s.weights, Some(Weights::ones()));
    }

    #[test]
    fn negative_weight_is_rejected_by_name() {
        let err = ExperimentSpec::from_json(r#"{"mode": "state", "weights": {"K": -1, "K_Gamma": 1, "Lambda": 1, "L": 1, "L_Gamma": 1, "M": 1}}"#)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string();
        assert!(err.contains("K = -1") && err.contains("nonnegative"), "{err}");
    }

    #[test]
    fn unknown_material_lists_catalog() {
        let err = ExperimentSpec::from_json(r#"{"mode": "state", "material": {"name": "steel"}}"#)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string();
        for name in CATALOG {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let err = ExperimentSpec::from_json(r#"{"mode": "optimize", "cells": 1, "eps": 0, "nu": -1}"#)
            .unwrap()
            .resolve()
            .unwrap_err();
        match err {
            Error::Config(v) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentSpec::from_json("{\n  \"mode\": \"state\",\n  \"cells\": \"many\"\n}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn resolved_spec_round_trips() {
        for text in [
            r#"{"mode": "state", "cells": 16}"#,
            r#"{"mode": "linear", "cells": 16}"#,
            r#"{"mode": "optimize", "benchmark": "inverse-crime", "cells": 8, "tau": 0.5}"#,
            r#"{"mode": "continuation", "benchmark": "facet", "cells": 8}"#,
        ] {
            let s = ExperimentSpec::from_json(text).unwrap().resolve().unwrap();
            let back = ExperimentSpec::from_json(&s.to_json()).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.resolve().unwrap(), s);
        }
    }

    #[test]
    fn benchmark_fields_are_fixed() {
        let err = ExperimentSpec::from_json(r#"{"mode": "state", "benchmark": "smooth", "eps": 0.3}"#)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string();
        assert!(err.contains("'eps' is fixed"), "{err}");
    }

    #[test]
    fn tables_are_checked_against_the_grid() {
        let s = ExperimentSpec::from_json(r#"{"mode": "state", "cells": 2, "tau": 0.25, "controls": {"u": {"values": [[1, 2]]}}}"#)
            .unwrap();
        assert!(s.resolve().unwrap_err().to_string().contains("3 values"));
        let ok = ExperimentSpec::from_json(
            r#"{"mode": "state", "cells": 2, "tau": 0.25, "init": {"theta": {"values": [[0, 0.5, 0]]}}}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(ok.problem().unwrap().init.theta.to_vec(), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn theta_data_must_vanish_at_the_ends() {
        let s = ExperimentSpec::from_json(r#"{"mode": "state", "init": {"theta": {"builtin": "constant", "params": {"value": 1}}}}"#)
            .unwrap();
        assert!(s.resolve().unwrap_err().to_string().contains("vanish"));
    }

    #[test]
    fn field_catalog_parameters() {
        let f = FieldSpec::function("sin", &[("amp".to_string(), 2.0), ("rate".to_string(), 1.0)].into()).unwrap();
        assert!((f(1.0, 0.5) - 4.0).abs() < 1e-15);
        let err = FieldSpec::function("sin", &[("freq".to_string(), 2.0)].into()).err().unwrap();
        assert!(err.contains("known: amp, k, phase, rate"), "{err}");
        assert!(FieldSpec::function("bessel", &BTreeMap::new()).err().unwrap().contains("staircase"));
    }
}
