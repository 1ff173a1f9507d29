//! Material functions alpha, g, G and the mobility alpha0, with declared bounds.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Declared global constants. They feed the estimate constants; the
/// validator only spot-checks them on samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeclaredBounds {
    pub alpha_prime_inf: f64,
    pub g_prime_inf: f64,
    /// Lipschitz constant of alpha * alpha'.
    pub alpha_alpha_prime_lip: f64,
    /// |alpha0|_{W^{1,inf}} on (0,T) x (0,1), as sup|a| + sup|a_t| + sup|a_x|.
    pub alpha0_w1inf_rate: f64,
    pub alpha0_w1inf_const: f64,
}

#[derive(Clone)]
pub struct MaterialModel {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub delta_star: f64,
    pub bounds: DeclaredBounds,
    alpha: Fn1,
    alpha_prime: Fn1,
    alpha_double_prime: Fn1,
    g: Fn1,
    g_prime: Fn1,
    big_g: Fn1,
    alpha0: Fn2,
    alpha0_dt: Fn2,
}

impl fmt::Debug for MaterialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaterialModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("delta_star", &self.delta_star)
            .finish()
    }
}

/// Closures for a user-defined model.
pub struct ModelFns {
    pub alpha: Fn1,
    pub alpha_prime: Fn1,
    pub alpha_double_prime: Fn1,
    pub g: Fn1,
    pub g_prime: Fn1,
    pub big_g: Fn1,
    pub alpha0: Fn2,
    pub alpha0_dt: Fn2,
}

impl MaterialModel {
    pub fn custom(name: &str, delta_star: f64, bounds: DeclaredBounds, fns: ModelFns) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            delta_star,
            bounds,
            alpha: fns.alpha,
            alpha_prime: fns.alpha_prime,
            alpha_double_prime: fns.alpha_double_prime,
            g: fns.g,
            g_prime: fns.g_prime,
            big_g: fns.big_g,
            alpha0: fns.alpha0,
            alpha0_dt: fns.alpha0_dt,
        }
    }

    #[inline]
    pub fn alpha(&self, eta: f64) -> f64 {
        (self.alpha)(eta)
    }
    #[inline]
    pub fn alpha_prime(&self, eta: f64) -> f64 {
        (self.alpha_prime)(eta)
    }
    #[inline]
    pub fn alpha_double_prime(&self, eta: f64) -> f64 {
        (self.alpha_double_prime)(eta)
    }
    #[inline]
    pub fn g(&self, eta: f64) -> f64 {
        (self.g)(eta)
    }
    #[inline]
    pub fn g_prime(&self, eta: f64) -> f64 {
        (self.g_prime)(eta)
    }
    #[inline]
    pub fn big_g(&self, eta: f64) -> f64 {
        (self.big_g)(eta)
    }
    #[inline]
    pub fn alpha0(&self, t: f64, x: f64) -> f64 {
        (self.alpha0)(t, x)
    }
    #[inline]
    pub fn alpha0_dt(&self, t: f64, x: f64) -> f64 {
        (self.alpha0_dt)(t, x)
    }

    pub fn alpha0_w1inf(&self, t_final: f64) -> f64 {
        self.bounds.alpha0_w1inf_const + self.bounds.alpha0_w1inf_rate * t_final
    }

    /// sup |alpha| over [-range, range], sampled.
    pub fn alpha_sup(&self, range: f64) -> f64 {
        (0..=2000)
            .map(|k| self.alpha(-range + 2.0 * range * k as f64 / 2000.0).abs())
            .fold(0.0, f64::max)
    }

    /// R0 = 1 + 2 |alpha|^2 / nu^2 with |alpha| taken over the sampled range.
    pub fn r0(&self, nu: f64, range: f64) -> f64 {
        1.0 + 2.0 * self.alpha_sup(range).powi(2) / (nu * nu)
    }
}

/// alpha = delta* + sqrt(1 + eta^2), g = kappa sin(pi eta), alpha0 = 1 + r t x.
fn kwc(delta_star: f64, kappa: f64, rate: f64, name: &str) -> MaterialModel {
    let fns = ModelFns {
        alpha: Arc::new(move |e| delta_star + (1.0 + e * e).sqrt()),
        alpha_prime: Arc::new(|e| e / (1.0 + e * e).sqrt()),
        alpha_double_prime: Arc::new(|e| (1.0 + e * e).powf(-1.5)),
        g: Arc::new(move |e| kappa * (PI * e).sin()),
        g_prime: Arc::new(move |e| kappa * PI * (PI * e).cos()),
        big_g: Arc::new(move |e| kappa * (1.0 - (PI * e).cos()) / PI),
        alpha0: Arc::new(move |t, x| 1.0 + rate * t * x),
        alpha0_dt: Arc::new(move |_t, x| rate * x),
    };
    let bounds = DeclaredBounds {
        alpha_prime_inf: 1.0,
        g_prime_inf: kappa.abs() * PI,
        // (alpha alpha')' = alpha'^2 + alpha alpha'' <= 1 + delta*
        alpha_alpha_prime_lip: 1.0 + delta_star,
        alpha0_w1inf_rate: 2.0 * rate.abs(),
        alpha0_w1inf_const: 1.0 + rate.abs(),
    };
    let mut m = MaterialModel::custom(name, delta_star, bounds, fns);
    m.params = BTreeMap::from([
        ("delta_star".to_string(), delta_star),
        ("g_scale".to_string(), kappa),
        ("alpha0_rate".to_string(), rate),
    ]);
    m
}

pub fn builtin_default() -> MaterialModel {
    kwc(0.5, 1.0, 0.0, "default")
}

/// Same as the default but alpha0(t,x) = 1 + 0.1 t x, so d_t alpha0 != 0.
pub fn builtin_varying_alpha0() -> MaterialModel {
    kwc(0.5, 1.0, 0.1, "varying_alpha0")
}

pub const CATALOG: [&str; 2] = ["default", "varying_alpha0"];

/// Look up a catalog model; parameters `delta_star`, `g_scale` and
/// `alpha0_rate` override the defaults.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<MaterialModel> {
    let (mut ds, mut kappa, mut rate) = match name {
        "default" => (0.5, 1.0, 0.0),
        "varying_alpha0" => (0.5, 1.0, 0.1),
        other => {
            return Err(Error::config(format!(
                "unknown material '{other}'; available: {}",
                CATALOG.join(", ")
            )))
        }
    };
    let mut errs = Vec::new();
    for (k, &v) in params {
        match k.as_str() {
            "delta_star" => ds = v,
            "g_scale" => kappa = v,
            "alpha0_rate" => rate = v,
            other => errs.push(format!(
                "material '{name}' has no parameter '{other}' (known: delta_star, g_scale, alpha0_rate)"
            )),
        }
    }
    if !(ds > 0.0 && ds < 1.0) {
        errs.push(format!("delta_star must lie in (0,1), got {ds}"));
    }
    if !kappa.is_finite() {
        errs.push("g_scale must be finite".into());
    }
    if !(rate.is_finite() && rate >= 0.0) {
        errs.push(format!("alpha0_rate must be finite and nonnegative, got {rate}"));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(kwc(ds, kappa, rate, name))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Largest violation found (0 when passed).
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Spot-check the structural assumptions on `samples` (eta values); alpha0 is
/// checked on a 21 x 21 grid of (0,1)^2.
pub fn validate(model: &MaterialModel, samples: &[f64], tol: f64) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("validation needs a nonempty sample grid".into()));
    }
    let mut checks = Vec::new();
    let mut push = |name: &str, worst: f64| {
        let worst = if worst.is_nan() { f64::INFINITY } else { worst.max(0.0) };
        checks.push(AssumptionCheck { name: name.to_string(), passed: worst <= tol, worst });
    };
    let ds = model.delta_star;
    push("delta_star in (0,1)", if ds > 0.0 && ds < 1.0 { 0.0 } else { f64::INFINITY });

    let maxv = |f: &dyn Fn(f64) -> f64| samples.iter().map(|&e| f(e)).fold(f64::NEG_INFINITY, f64::max);
    push("alpha >= delta_star", maxv(&|e| ds - model.alpha(e)));
    push("alpha'(0) = 0", model.alpha_prime(0.0).abs());
    push("alpha'' >= 0", maxv(&|e| -model.alpha_double_prime(e)));
    push("0 <= G", maxv(&|e| -model.big_g(e)));

    let decl = |b: f64| if b.is_finite() { b } else { f64::NAN };
    push(
        "alpha' in Linf",
        maxv(&|e| model.alpha_prime(e).abs()) - decl(model.bounds.alpha_prime_inf),
    );
    push("g' in Linf", maxv(&|e| model.g_prime(e).abs()) - decl(model.bounds.g_prime_inf));

    // derivative consistency by central differences, scaled by magnitude
    let d = 1e-5;
    let fd_err = |f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64| {
        maxv(&|e| ((f(e + d) - f(e - d)) / (2.0 * d) - df(e)).abs() / (1.0 + df(e).abs()))
    };
    push("G' = g", fd_err(&|e| model.big_g(e), &|e| model.g(e)));
    push("alpha' = d alpha", fd_err(&|e| model.alpha(e), &|e| model.alpha_prime(e)));
    push("alpha'' = d alpha'", fd_err(&|e| model.alpha_prime(e), &|e| model.alpha_double_prime(e)));
    push("g' = d g", fd_err(&|e| model.g(e), &|e| model.g_prime(e)));

    // Lipschitz bound of alpha alpha' on consecutive sample pairs
    let aa = |e: f64| model.alpha(e) * model.alpha_prime(e);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut lip: f64 = 0.0;
    for w in sorted.windows(2) {
        lip = lip.max((aa(w[1]) - aa(w[0])).abs() / (w[1] - w[0]));
    }
    push("(alpha alpha')' in Linf", lip - decl(model.bounds.alpha_alpha_prime_lip));

    let mut a0_min = f64::INFINITY;
    let mut a0_dt_err: f64 = 0.0;
    for it in 0..=20 {
        for ix in 0..=20 {
            let (t, x) = (it as f64 / 20.0, ix as f64 / 20.0);
            a0_min = a0_min.min(model.alpha0(t, x));
            let fd = (model.alpha0(t + d, x) - model.alpha0(t - d, x)) / (2.0 * d);
            a0_dt_err = a0_dt_err.max((fd - model.alpha0_dt(t, x)).abs());
        }
    }
    push("alpha0 >= delta_star", ds - a0_min);
    push("alpha0_dt = d_t alpha0", a0_dt_err);
    Ok(ValidationReport { checks })
}

/// 10^4 evenly spaced samples of [-10, 10].
pub fn default_samples() -> Vec<f64> {
    (0..10_000).map(|k| -10.0 + 20.0 * k as f64 / 9_999.0).collect()
}
