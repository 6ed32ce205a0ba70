//! Energy minimization by block-coordinate descent over successively
//! convexified subproblems.

pub mod bcd;
pub mod bounds;
pub mod convex;
pub mod subproblem;

pub use bcd::{
    baseline_fixed_allocation, baseline_fixed_trajectory, bcd_optimize, optimize_joint, Baseline, BcdOptions,
    BcdStatus, BlockPlan, ScaError, SolveTrace, TraceRow,
};
pub use bounds::{amgm_upper_bilinear, log_lower_bound, taylor_lower_square};
pub use convex::{solve_convex, ConvexFn, InnerTrace, LinearForm, SolveError, SolveOptions, SubproblemSpec};
pub use subproblem::{build_program, build_subproblem1, build_subproblem2, BlockVars, Layout, LinearizationPoint};
