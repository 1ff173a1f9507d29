//! Fixtures shared by the criterion benches.

use kwc_core::benchmarks::{random_controls, smooth_benchmark};
use kwc_core::verify::ManufacturedP;
use kwc_core::{CoefficientQuintet, ControlTriple, ForcingTriple, LinearTriple, Mesh1D, ProblemConfig, Result, TimeGrid};

/// Smooth eps = 0.1 problem with one step per cell and random controls.
pub fn state_case(n_cells: usize) -> Result<(ProblemConfig, ControlTriple)> {
    let cfg = smooth_benchmark(n_cells, n_cells)?;
    let u = random_controls(&cfg, 1);
    Ok((cfg, u))
}

pub struct LinearCase {
    pub mesh: Mesh1D,
    pub grid: TimeGrid,
    pub init: LinearTriple,
    pub quintet: CoefficientQuintet,
    pub forcing: ForcingTriple,
}

/// Manufactured linear problem on [0, 1] with `steps` steps.
pub fn linear_case(n_cells: usize, steps: usize) -> Result<LinearCase> {
    let mesh = Mesh1D::new(n_cells)?;
    let grid = TimeGrid::from_steps(1.0, steps)?;
    let m = ManufacturedP::TimeDependent;
    Ok(LinearCase { init: m.init(&mesh), quintet: m.quintet(&mesh, &grid)?, forcing: m.forcing(&mesh, &grid), mesh, grid })
}
