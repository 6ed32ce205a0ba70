//! Alternating optimization of the user block and the UAV block, each solved
//! by successive convex approximation.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::convex::{solve_convex, SolveError, SolveOptions};
use super::subproblem::{build_program, BlockVars, BuildError, LinearizationPoint};
use crate::model::{
    constraint_residuals, total_energy, AllocationSolution, ModelError, SystemConfig, UavTrajectory, UserProfile,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaError {
    #[error("initial point infeasible: largest residual {0:.3e}")]
    InfeasibleInit(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("outer iteration {iteration}, {block} block: {source}")]
    Build {
        iteration: usize,
        block: &'static str,
        source: BuildError,
    },
    #[error("outer iteration {iteration}, {block} block: {source}")]
    Solve {
        iteration: usize,
        block: &'static str,
        source: SolveError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Relative decrease that ends a block's inner SCA loop.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Largest original-constraint residual accepted from a block.
    pub feas_tol: f64,
    pub solve: SolveOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-3,
            max_outer: 30,
            inner_tol: 1e-6,
            max_inner: 5,
            feas_tol: 1e-6,
            solve: SolveOptions::default(),
        }
    }
}

/// Which blocks are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    /// Frequencies and all transmit powers under the current trajectory.
    pub powers: bool,
    /// Waypoints and UAV powers under the current user allocation.
    pub uav: bool,
}

impl BlockPlan {
    pub const JOINT: BlockPlan = BlockPlan {
        powers: true,
        uav: true,
    };
    pub const FIXED_TRAJECTORY: BlockPlan = BlockPlan {
        powers: true,
        uav: false,
    };
    pub const FIXED_ALLOCATION: BlockPlan = BlockPlan {
        powers: false,
        uav: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcdStatus {
    Converged,
    MaxOuter,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub energy_j: f64,
    pub feas_residual: f64,
    /// SCA steps taken in the power block and the UAV block.
    pub user_inner: usize,
    pub uav_inner: usize,
    pub newton_iters: usize,
    pub ms: f64,
}

impl TraceRow {
    pub fn inner_iters(&self) -> usize {
        self.user_inner + self.uav_inner
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub status: BcdStatus,
}

impl SolveTrace {
    pub fn final_energy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.energy_j)
    }

    /// Number of outer iterations run (row 0 is the initial point).
    pub fn outer_iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }
}

fn max_residual(sol: &AllocationSolution, users: &[UserProfile], cfg: &SystemConfig) -> f64 {
    constraint_residuals(sol, users, cfg)
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max)
}

struct BlockResult {
    steps: usize,
    newton: usize,
}

/// Runs SCA on one block until the true energy stops decreasing.
fn run_block(
    block: BlockVars,
    name: &'static str,
    iteration: usize,
    sol: &mut AllocationSolution,
    energy: &mut f64,
    users: &[UserProfile],
    cfg: &SystemConfig,
    opts: &BcdOptions,
) -> Result<BlockResult, ScaError> {
    let mut res = BlockResult { steps: 0, newton: 0 };
    let build_err = |source| ScaError::Build {
        iteration,
        block: name,
        source,
    };
    let solve_err = |source| ScaError::Solve {
        iteration,
        block: name,
        source,
    };
    for _ in 0..opts.max_inner {
        let lin = LinearizationPoint::tight(sol, users, cfg);
        let mut cand = sol.clone();
        let (spec, lay, init) = build_program(users, sol, &lin, cfg, block).map_err(build_err)?;
        let (x, tr) = solve_convex(&spec, &init, &opts.solve).map_err(solve_err)?;
        lay.apply(&x, &mut cand);
        let newton = tr.newton_iters + tr.phase1_iters;
        res.newton += newton;
        res.steps += 1;
        let e = total_energy(&cand, users, cfg);
        if !(e <= *energy) || max_residual(&cand, users, cfg) > opts.feas_tol {
            break;
        }
        let decrease = (*energy - e) / energy.max(f64::MIN_POSITIVE);
        *sol = cand;
        *energy = e;
        if decrease < opts.inner_tol {
            break;
        }
    }
    Ok(res)
}

/// Block-coordinate descent from a feasible `init` over the blocks in `plan`.
pub fn bcd_optimize(
    users: &[UserProfile],
    cfg: &SystemConfig,
    init: &AllocationSolution,
    plan: BlockPlan,
    opts: &BcdOptions,
) -> Result<(AllocationSolution, SolveTrace), ScaError> {
    init.check_dims(users.len(), cfg)?;
    let worst = max_residual(init, users, cfg);
    if worst > opts.feas_tol {
        return Err(ScaError::InfeasibleInit(worst));
    }
    let mut sol = init.clone();
    let mut energy = total_energy(&sol, users, cfg);
    let mut rows = vec![TraceRow {
        outer_iter: 0,
        energy_j: energy,
        feas_residual: worst,
        user_inner: 0,
        uav_inner: 0,
        newton_iters: 0,
        ms: 0.0,
    }];
    if users.is_empty() {
        return Ok((
            sol,
            SolveTrace {
                rows,
                status: BcdStatus::Converged,
            },
        ));
    }
    let mut status = BcdStatus::MaxOuter;
    for it in 1..=opts.max_outer {
        let clock = Instant::now();
        let prev_sol = sol.clone();
        let prev = energy;
        let mut row = TraceRow {
            outer_iter: it,
            energy_j: energy,
            feas_residual: 0.0,
            user_inner: 0,
            uav_inner: 0,
            newton_iters: 0,
            ms: 0.0,
        };
        if plan.powers {
            let r = run_block(BlockVars::POWERS, "powers", it, &mut sol, &mut energy, users, cfg, opts)?;
            row.user_inner = r.steps;
            row.newton_iters += r.newton;
        }
        if plan.uav {
            let r = run_block(BlockVars::UAV, "uav", it, &mut sol, &mut energy, users, cfg, opts)?;
            row.uav_inner = r.steps;
            row.newton_iters += r.newton;
        }
        if energy > prev * (1.0 + 1e-9) {
            sol = prev_sol;
            status = BcdStatus::Stalled;
            break;
        }
        row.energy_j = energy;
        row.feas_residual = max_residual(&sol, users, cfg);
        row.ms = clock.elapsed().as_secs_f64() * 1e3;
        rows.push(row);
        if (prev - energy) / prev < opts.outer_tol {
            status = BcdStatus::Converged;
            break;
        }
    }
    Ok((sol, SolveTrace { rows, status }))
}

/// Which optimizer a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Joint optimization of both blocks.
    #[default]
    None,
    FixedTraj,
    FixedAlloc,
}

impl Baseline {
    pub fn run(
        self,
        users: &[UserProfile],
        cfg: &SystemConfig,
        opts: &BcdOptions,
    ) -> Result<(AllocationSolution, SolveTrace), ScaError> {
        match self {
            Baseline::None => optimize_joint(users, cfg, opts),
            Baseline::FixedTraj => baseline_fixed_trajectory(users, cfg, opts),
            Baseline::FixedAlloc => baseline_fixed_allocation(users, cfg, opts),
        }
    }
}

/// Joint optimization from the midpoint start.
pub fn optimize_joint(
    users: &[UserProfile],
    cfg: &SystemConfig,
    opts: &BcdOptions,
) -> Result<(AllocationSolution, SolveTrace), ScaError> {
    let init = AllocationSolution::midpoint(cfg, users.len());
    bcd_optimize(users, cfg, &init, BlockPlan::JOINT, opts)
}

/// Waypoints pinned to the straight start-to-end line; frequencies and
/// transmit powers optimized.
pub fn baseline_fixed_trajectory(
    users: &[UserProfile],
    cfg: &SystemConfig,
    opts: &BcdOptions,
) -> Result<(AllocationSolution, SolveTrace), ScaError> {
    let mut init = AllocationSolution::midpoint(cfg, users.len());
    init.trajectory = UavTrajectory::straight_line(cfg.start_pos, cfg.end_pos, cfg.k_slots);
    bcd_optimize(users, cfg, &init, BlockPlan::FIXED_TRAJECTORY, opts)
}

/// Frequencies and user powers pinned at half their caps; trajectory and UAV
/// powers optimized.
pub fn baseline_fixed_allocation(
    users: &[UserProfile],
    cfg: &SystemConfig,
    opts: &BcdOptions,
) -> Result<(AllocationSolution, SolveTrace), ScaError> {
    let init = AllocationSolution::midpoint(cfg, users.len());
    bcd_optimize(users, cfg, &init, BlockPlan::FIXED_ALLOCATION, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn case(n: usize, seed: u64) -> (SystemConfig, Vec<UserProfile>) {
        let cfg = SystemConfig {
            n_users: n,
            k_slots: 3,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..n)
            .map(|_| UserProfile {
                pos: Point2::new(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0)),
                data_size: 1000.0,
                cycles_per_sample: 2e7,
                local_iters: 5.0,
                upload_bits: 2e9,
                model_bits: 2e9,
            })
            .collect();
        (cfg, users)
    }

    #[test]
    fn descent_and_feasibility() {
        let (cfg, users) = case(2, 1);
        let (sol, trace) = optimize_joint(&users, &cfg, &BcdOptions::default()).unwrap();
        for w in trace.rows.windows(2) {
            assert!(w[1].energy_j <= w[0].energy_j * (1.0 + 1e-9));
        }
        assert!(max_residual(&sol, &users, &cfg) <= 1e-6);
        assert!(sol.trajectory.step_residuals(&cfg).iter().all(|&r| r <= 1e-6));
        assert_eq!(trace.status, BcdStatus::Converged);
    }

    #[test]
    fn restart_from_optimum_stops_at_once() {
        let (cfg, users) = case(2, 2);
        let opts = BcdOptions::default();
        let (sol, trace) = optimize_joint(&users, &cfg, &opts).unwrap();
        let (_, again) = bcd_optimize(&users, &cfg, &sol, BlockPlan::JOINT, &opts).unwrap();
        assert_eq!(again.outer_iterations(), 1);
        let drop = (trace.final_energy() - again.final_energy()) / trace.final_energy();
        assert!(drop < opts.outer_tol);
    }

    #[test]
    fn joint_beats_baselines() {
        let (cfg, users) = case(3, 3);
        let opts = BcdOptions::default();
        let (_, joint) = optimize_joint(&users, &cfg, &opts).unwrap();
        let (ft_sol, ft) = baseline_fixed_trajectory(&users, &cfg, &opts).unwrap();
        let (fa_sol, fa) = baseline_fixed_allocation(&users, &cfg, &opts).unwrap();
        assert!(joint.final_energy() <= ft.final_energy());
        assert!(joint.final_energy() <= fa.final_energy());
        let line = UavTrajectory::straight_line(cfg.start_pos, cfg.end_pos, cfg.k_slots);
        assert_eq!(ft_sol.trajectory, line);
        assert_eq!(fa_sol.freq, vec![0.5 * cfg.f_max_hz; 3]);
        assert_eq!(fa_sol.user_power, vec![0.5 * cfg.q_max_w; 3]);
    }

    #[test]
    fn no_users_no_energy() {
        let cfg = SystemConfig::default();
        let opts = BcdOptions::default();
        for run in [optimize_joint, baseline_fixed_trajectory, baseline_fixed_allocation] {
            let (_, trace) = run(&[], &cfg, &opts).unwrap();
            assert_eq!(trace.final_energy(), 0.0);
        }
    }

    #[test]
    fn infeasible_init_rejected() {
        let (cfg, users) = case(1, 4);
        let mut init = AllocationSolution::midpoint(&cfg, 1);
        init.freq[0] = 2.0 * cfg.f_max_hz;
        let err = bcd_optimize(&users, &cfg, &init, BlockPlan::JOINT, &BcdOptions::default()).unwrap_err();
        assert!(matches!(err, ScaError::InfeasibleInit(_)));
    }

    #[test]
    fn deterministic_trace() {
        let (cfg, users) = case(2, 5);
        let opts = BcdOptions::default();
        let strip = |t: SolveTrace| {
            t.rows
                .iter()
                .map(|r| (r.energy_j.to_bits(), r.newton_iters))
                .collect::<Vec<_>>()
        };
        let (a, ta) = optimize_joint(&users, &cfg, &opts).unwrap();
        let (b, tb) = optimize_joint(&users, &cfg, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(strip(ta), strip(tb));
    }
}
