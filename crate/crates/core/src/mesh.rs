//! Uniform P1 mesh on (0,1), the time grid, and the discrete inner products.
//!
//! Boundary nodes double as the boundary unknowns, so a bulk grid function
//! carries its own trace and the coupled bulk/boundary space is just the bulk
//! vector plus the two boundary masses.

use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::banded::solve_tridiagonal;
use crate::error::{Error, Result};

/// Nodal values, length `n_cells + 1`.
pub type GridFn = Vec<f64>;
/// Values at x = 0 and x = 1.
pub type BoundaryPair = [f64; 2];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassKind {
    #[default]
    Lumped,
    Consistent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh1D {
    n_cells: usize,
    h: f64,
    mass: MassKind,
}

impl Mesh1D {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::Invalid(format!("mesh needs at least 2 cells, got {n_cells}")));
        }
        Ok(Self { n_cells, h: 1.0 / n_cells as f64, mass: MassKind::Lumped })
    }

    pub fn with_mass(mut self, mass: MassKind) -> Self {
        self.mass = mass;
        self
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mass(&self) -> MassKind {
        self.mass
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.n_cells {
            1.0
        } else {
            j as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|j| self.x(j)).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_cells).map(|c| (c as f64 + 0.5) * self.h).collect()
    }

    /// Outward normal sign at boundary point `ell` (0 or 1).
    pub fn n_gamma(ell: usize) -> f64 {
        if ell == 0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Row-sum (lumped) weights.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n_cells {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn lumped_weights(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|j| self.weight(j)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFn {
        self.nodes().into_iter().map(f).collect()
    }

    pub fn check_len(&self, f: &[f64], what: &str) -> Result<()> {
        if f.len() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "{what}: expected {} nodal values, got {}",
                self.n_nodes(),
                f.len()
            )));
        }
        Ok(())
    }

    /// Mass matrix with nodal weight `a` (None means a = 1) as tridiagonal bands.
    /// The consistent variant uses the cell average of `a`.
    pub fn mass_bands(&self, a: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_nodes();
        let av = |j: usize| a.map_or(1.0, |a| a[j]);
        let mut lo = vec![0.0; n - 1];
        let mut di = vec![0.0; n];
        let mut up = vec![0.0; n - 1];
        match self.mass {
            MassKind::Lumped => {
                for (j, d) in di.iter_mut().enumerate() {
                    *d = self.weight(j) * av(j);
                }
            }
            MassKind::Consistent => {
                for c in 0..self.n_cells {
                    let abar = 0.5 * (av(c) + av(c + 1));
                    let d = self.h / 3.0 * abar;
                    let o = self.h / 6.0 * abar;
                    di[c] += d;
                    di[c + 1] += d;
                    up[c] += o;
                    lo[c] += o;
                }
            }
        }
        (lo, di, up)
    }

    fn tri_apply(bands: &(Vec<f64>, Vec<f64>, Vec<f64>), f: &[f64]) -> Vec<f64> {
        let (lo, di, up) = bands;
        let n = di.len();
        (0..n)
            .map(|j| {
                let mut s = di[j] * f[j];
                if j > 0 {
                    s += lo[j - 1] * f[j - 1];
                }
                if j + 1 < n {
                    s += up[j] * f[j + 1];
                }
                s
            })
            .collect()
    }

    /// Load vector of a density: `M f` with the configured mass.
    pub fn mass_apply(&self, f: &[f64]) -> Vec<f64> {
        Self::tri_apply(&self.mass_bands(None), f)
    }

    pub fn weighted_mass_apply(&self, a: &[f64], f: &[f64]) -> Vec<f64> {
        Self::tri_apply(&self.mass_bands(Some(a)), f)
    }

    /// Stiffness matrix times f: the discrete form of (f', phi').
    pub fn stiffness_apply(&self, f: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_nodes()];
        for c in 0..self.n_cells {
            let q = (f[c + 1] - f[c]) / self.h;
            y[c] -= q;
            y[c + 1] += q;
        }
        y
    }

    /// L2(0,1) distance between the P1 interpolant of `nodal` and `exact`,
    /// by 3-point Gauss quadrature per cell.
    pub fn l2_error(&self, nodal: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
        const G: [(f64, f64); 3] = [
            (-0.774_596_669_241_483_4, 5.0 / 9.0),
            (0.0, 8.0 / 9.0),
            (0.774_596_669_241_483_4, 5.0 / 9.0),
        ];
        let mut s = 0.0;
        for c in 0..self.n_cells {
            for &(xi, wq) in &G {
                let lam = 0.5 * (1.0 + xi);
                let x = self.x(c) + lam * self.h;
                let uh = nodal[c] * (1.0 - lam) + nodal[c + 1] * lam;
                s += 0.5 * self.h * wq * (uh - exact(x)).powi(2);
            }
        }
        s.sqrt()
    }
}

/// Grid function vanishing at both endpoints (discrete V0).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn0(Vec<f64>);

impl GridFn0 {
    pub fn zeros(mesh: &Mesh1D) -> Self {
        Self(vec![0.0; mesh.n_nodes()])
    }

    pub fn from_interior(values: &[f64]) -> Self {
        let mut v = Vec::with_capacity(values.len() + 2);
        v.push(0.0);
        v.extend_from_slice(values);
        v.push(0.0);
        Self(v)
    }

    /// Rejects data whose endpoint values are not exactly zero.
    pub fn from_full(v: Vec<f64>) -> Result<Self> {
        match (v.first(), v.last()) {
            (Some(&a), Some(&b)) if v.len() >= 3 && a == 0.0 && b == 0.0 => Ok(Self(v)),
            _ => Err(Error::Invalid("V0 grid function must vanish at both endpoints".into())),
        }
    }

    /// Samples `f` at the nodes and forces zero endpoint values.
    pub fn from_fn(mesh: &Mesh1D, f: impl Fn(f64) -> f64) -> Self {
        Self::zeroed(mesh.sample(f))
    }

    pub(crate) fn zeroed(mut v: Vec<f64>) -> Self {
        let n = v.len();
        v[0] = 0.0;
        v[n - 1] = 0.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn interior(&self) -> &[f64] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GridFn0 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Bulk function together with its boundary values; the two must agree.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkBoundaryFn {
    bulk: Vec<f64>,
}

impl BulkBoundaryFn {
    pub fn new(bulk: GridFn, boundary: BoundaryPair) -> Result<Self> {
        let n = bulk.len();
        if n < 3 {
            return Err(Error::Dimension("bulk function needs at least 3 nodes".into()));
        }
        if bulk[0] != boundary[0] || bulk[n - 1] != boundary[1] {
            return Err(Error::Invalid(format!(
                "trace mismatch: bulk ends ({}, {}) vs boundary ({}, {})",
                bulk[0],
                bulk[n - 1],
                boundary[0],
                boundary[1]
            )));
        }
        Ok(Self { bulk })
    }

    /// The boundary part is read off the bulk end values.
    pub fn from_bulk(bulk: GridFn) -> Self {
        Self { bulk }
    }

    pub fn zeros(mesh: &Mesh1D) -> Self {
        Self { bulk: vec![0.0; mesh.n_nodes()] }
    }

    pub fn bulk(&self) -> &[f64] {
        &self.bulk
    }

    pub fn boundary(&self) -> BoundaryPair {
        [self.bulk[0], self.bulk[self.bulk.len() - 1]]
    }

    pub fn into_bulk(self) -> GridFn {
        self.bulk
    }
}

pub fn inner_h(mesh: &Mesh1D, f: &[f64], g: &[f64]) -> Result<f64> {
    mesh.check_len(f, "inner_h")?;
    mesh.check_len(g, "inner_h")?;
    Ok(dot(f, &mesh.mass_apply(g)))
}

pub fn norm_h(mesh: &Mesh1D, f: &[f64]) -> f64 {
    dot(f, &mesh.mass_apply(f)).max(0.0).sqrt()
}

pub fn inner_x(mesh: &Mesh1D, f: &BulkBoundaryFn, g: &BulkBoundaryFn) -> Result<f64> {
    let (fb, gb) = (f.boundary(), g.boundary());
    Ok(inner_h(mesh, f.bulk(), g.bulk())? + fb[0] * gb[0] + fb[1] * gb[1])
}

/// |f|_X^2 for a bulk vector whose end values are the boundary values.
pub fn norm_x_sq(mesh: &Mesh1D, f: &[f64]) -> f64 {
    let n = f.len() - 1;
    dot(f, &mesh.mass_apply(f)) + f[0] * f[0] + f[n] * f[n]
}

/// Per-cell forward differences.
pub fn diff_x(mesh: &Mesh1D, f: &[f64]) -> Vec<f64> {
    f.windows(2).map(|w| (w[1] - w[0]) / mesh.h()).collect()
}

/// |f'|_{L2}^2 of the P1 interpolant.
pub fn grad_sq(mesh: &Mesh1D, f: &[f64]) -> f64 {
    diff_x(mesh, f).iter().map(|d| d * d).sum::<f64>() * mesh.h()
}

/// Dual norm of a load vector over V0 with the gradient inner product:
/// sqrt(f^T K^{-1} f) on the interior nodes.
pub fn norm_v0_dual(mesh: &Mesh1D, load: &GridFn0) -> f64 {
    let f = load.interior();
    let m = f.len();
    let h = mesh.h();
    let off = vec![-1.0 / h; m - 1];
    let diag = vec![2.0 / h; m];
    let y = solve_tridiagonal(&off, &diag, &off, f).expect("interior stiffness is nonsingular");
    dot(f, &y).max(0.0).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniform time grid t_i = i*tau, i = 0..=steps, with (steps-1)*tau < T <= steps*tau.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    tau: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, tau: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Invalid(format!("final time must be positive, got {t_final}")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Invalid(format!("time step must lie in (0,1), got {tau}")));
        }
        let mut n = (t_final / tau).ceil().max(1.0) as usize;
        while n > 1 && (n - 1) as f64 * tau >= t_final {
            n -= 1;
        }
        while (n as f64) * tau < t_final {
            n += 1;
        }
        Ok(Self { t_final, tau, steps: n })
    }

    /// Grid with exactly `steps` steps of size T/steps.
    pub fn from_steps(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("need at least one time step".into()));
        }
        let tau = t_final / steps as f64;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Invalid(format!("time step must lie in (0,1), got {tau}")));
        }
        Ok(Self { t_final, tau, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.tau
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn inner_h_examples() {
        let m = Mesh1D::new(4).unwrap();
        let one = vec![1.0; 5];
        assert_relative_eq!(inner_h(&m, &one, &one).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(inner_h(&m, &[0.0; 5], &m.nodes()).unwrap(), 0.0);
        let x = m.nodes();
        assert_relative_eq!(inner_h(&m, &x, &x).unwrap(), 0.34375, epsilon = 1e-15);
        let mc = Mesh1D::new(4).unwrap().with_mass(MassKind::Consistent);
        assert_relative_eq!(inner_h(&mc, &one, &one).unwrap(), 1.0, epsilon = 1e-15);
        // consistent mass integrates P1 products exactly
        assert_relative_eq!(inner_h(&mc, &x, &x).unwrap(), 1.0 / 3.0, epsilon = 1e-14);
        assert!(inner_h(&m, &one, &[1.0; 4]).is_err());
    }

    #[test]
    fn inner_x_examples() {
        let m = Mesh1D::new(4).unwrap();
        let f = BulkBoundaryFn::new(vec![1.0; 5], [1.0, 1.0]).unwrap();
        assert_relative_eq!(inner_x(&m, &f, &f).unwrap(), 3.0, epsilon = 1e-15);
        let z = BulkBoundaryFn::zeros(&m);
        assert_eq!(inner_x(&m, &z, &f).unwrap(), 0.0);
        // bulk zero except the trace values: the bulk integral only sees the end nodes
        let g = BulkBoundaryFn::from_bulk(vec![2.0, 0.0, 0.0, 0.0, 3.0]);
        let o = BulkBoundaryFn::from_bulk(vec![1.0, 0.0, 0.0, 0.0, 1.0]);
        let bulk = inner_h(&m, g.bulk(), o.bulk()).unwrap();
        assert_relative_eq!(inner_x(&m, &g, &o).unwrap() - bulk, 5.0, epsilon = 1e-15);
    }

    #[test]
    fn trace_mismatch_rejected() {
        assert!(BulkBoundaryFn::new(vec![0.0, 1.0, 2.0], [0.0, 1.0]).is_err());
        assert!(BulkBoundaryFn::new(vec![0.0, 1.0, 2.0], [0.0, 2.0]).is_ok());
        assert!(GridFn0::from_full(vec![0.0, 1.0, 0.5]).is_err());
        assert!(GridFn0::from_full(vec![0.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn diff_x_examples() {
        let m = Mesh1D::new(2).unwrap();
        let x2: Vec<f64> = m.nodes().iter().map(|x| x * x).collect();
        assert_eq!(diff_x(&m, &x2), vec![0.5, 1.5]);
        let m8 = Mesh1D::new(8).unwrap();
        for d in diff_x(&m8, &m8.nodes()) {
            assert_relative_eq!(d, 1.0, epsilon = 1e-13);
        }
        assert!(diff_x(&m8, &[3.5; 9]).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn dual_norm_of_sine_load() {
        let target = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
        let mut last = f64::INFINITY;
        for n in [16, 64, 256] {
            let m = Mesh1D::new(n).unwrap().with_mass(MassKind::Consistent);
            let s = m.sample(|x| (std::f64::consts::PI * x).sin());
            let load = GridFn0::zeroed(m.mass_apply(&s));
            let err = (norm_v0_dual(&m, &load) - target).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-4);
        let m = Mesh1D::new(8).unwrap();
        assert_eq!(norm_v0_dual(&m, &GridFn0::zeros(&m)), 0.0);
    }

    #[test]
    fn time_grid_counts_steps() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        assert_eq!(g.steps(), 10);
        let g = TimeGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.steps(), 4);
        assert!((g.steps() - 1) as f64 * 0.3 < 1.0 && 1.0 <= g.steps() as f64 * 0.3);
        assert!(TimeGrid::new(1.0, 1.5).is_err());
        assert!(Mesh1D::new(1).is_err());
    }

    fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn inner_products_symmetric_bilinear((f, g, k) in vecs(9), a in -3.0..3.0f64, consistent in any::<bool>()) {
            let m = Mesh1D::new(8).unwrap().with_mass(if consistent { MassKind::Consistent } else { MassKind::Lumped });
            let fg = inner_h(&m, &f, &g).unwrap();
            prop_assert!((fg - inner_h(&m, &g, &f).unwrap()).abs() <= 1e-12 * (1.0 + fg.abs()));
            let lin: Vec<f64> = f.iter().zip(&k).map(|(x, y)| a * x + y).collect();
            let lhs = inner_h(&m, &lin, &g).unwrap();
            let rhs = a * fg + inner_h(&m, &k, &g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
            let cs = norm_h(&m, &f) * norm_h(&m, &g);
            prop_assert!(fg.abs() <= cs * (1.0 + 1e-12) + 1e-12);
            let fx = BulkBoundaryFn::from_bulk(f.clone());
            let gx = BulkBoundaryFn::from_bulk(g.clone());
            let xx = inner_x(&m, &fx, &gx).unwrap();
            prop_assert!((xx - inner_x(&m, &gx, &fx).unwrap()).abs() <= 1e-12 * (1.0 + xx.abs()));
            prop_assert!(xx.abs() <= (norm_x_sq(&m, &f) * norm_x_sq(&m, &g)).sqrt() * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn diff_x_of_affine_is_constant(c0 in -5.0..5.0f64, c1 in -5.0..5.0f64) {
            let m = Mesh1D::new(10).unwrap();
            let f = m.sample(|x| c0 + c1 * x);
            for d in diff_x(&m, &f) {
                prop_assert!((d - c1).abs() < 1e-12 * (1.0 + c0.abs() + c1.abs()) * 10.0);
            }
            let c = vec![c0; 11];
            prop_assert!(diff_x(&m, &c).iter().all(|&d| d == 0.0));
        }

        #[test]
        fn discrete_poincare(vals in prop::collection::vec(-10.0..10.0f64, 11)) {
            let m = Mesh1D::new(12).unwrap();
            let f = GridFn0::from_interior(&vals);
            prop_assert!(norm_h(&m, &f).powi(2) <= grad_sq(&m, &f) * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn dual_norm_homogeneous(vals in prop::collection::vec(-10.0..10.0f64, 7), s in -4.0..4.0f64) {
            let m = Mesh1D::new(8).unwrap();
            let f = GridFn0::from_interior(&vals);
            let g = GridFn0::from_interior(&vals.iter().map(|v| s * v).collect::<Vec<_>>());
            let (a, b) = (norm_v0_dual(&m, &f), norm_v0_dual(&m, &g));
            prop_assert!((b - s.abs() * a).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
