//! Solvers for a 1D phase-field model of grain boundary motion with a dynamic
//! boundary condition: the nonlinear state system, its linearization and
//! adjoint, tracking-type optimal control, and numerical checks of the
//! estimates behind them.

pub mod adjoint;
pub mod banded;
pub mod benchmarks;
pub mod error;
pub mod io;
pub mod linear;
pub mod material;
pub mod mesh;
pub mod optimizer;
pub mod problem;
pub mod regularization;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
pub use linear::{
    check_apriori, constants, solve_P, solve_step, tau0, CoefficientQuintet, EstimateConstants, ForcingTriple,
    LinearTrajectory, LinearTriple,
};
pub use material::{builtin, builtin_default, validate, MaterialModel};
pub use mesh::{diff_x, inner_h, inner_x, norm_v0_dual, BoundaryPair, BulkBoundaryFn, GridFn, GridFn0, MassKind, Mesh1D, TimeGrid};
pub use problem::{
    ControlTriple, GradientTriple, ProblemConfig, SolverOptions, StateTriple, StepCoupling, Targets, TauPolicy, Weights,
};
pub use regularization::{f_eps, f_eps_double_prime, f_eps_prime, sgn1, sgn_residual, Epsilon};
pub use adjoint::{cost, evaluate, gradient, solve_adjoint, solve_sensitivity, Evaluation};
pub use optimizer::{
    solve_op, solve_op0, ContinuationResult, ContinuationSchedule, LimitCertificate, OptResult, OptimizerConfig,
    StepStrategy, Termination,
};
pub use state::{solve_state, step_eta, step_theta, EnergyRecord, StateTrajectory};
pub use io::{parse_config, run, ExperimentSpec, Mode, Overrides, RunError};
