//! Planning under twin deviations: the optimizer chooses actual operating
//! points, and the planner turns them into device commands.

use serde::{Deserialize, Serialize};

use crate::model::{round_totals, AllocationSolution, EnergyLatencyReport, SystemConfig, UserProfile};
use crate::sca::{Baseline, BcdOptions, ScaError, SolveTrace};
use crate::twin::{ActualParams, DeviationDraw, TwinState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// Deviations are known through the twin and folded into the commands.
    Twin,
    /// Only the deviation band is known; the plan keeps a guard band.
    GuardBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    /// Operating point the optimizer planned for.
    pub planned: AllocationSolution,
    /// Values sent to the devices.
    pub commanded: AllocationSolution,
    /// Twin view of the commanded devices.
    pub twin: TwinState,
    /// Energy and latency at the values the devices actually run at.
    pub realized: EnergyLatencyReport,
    pub trace: SolveTrace,
}

fn params(sol: &AllocationSolution) -> ActualParams {
    ActualParams {
        freq: sol.freq.clone(),
        user_power: sol.user_power.clone(),
        uav_power: sol.uav_power.clone(),
    }
}

fn scaled(
    sol: &AllocationSolution,
    factor: impl Fn(usize) -> f64,
    uav_factor: impl Fn(usize) -> f64,
) -> AllocationSolution {
    let mut out = sol.clone();
    for (n, f) in out.freq.iter_mut().enumerate() {
        *f *= factor(n);
    }
    for (n, q) in out.user_power.iter_mut().enumerate() {
        *q *= factor(n);
    }
    for (k, q) in out.uav_power.iter_mut().enumerate() {
        *q *= uav_factor(k);
    }
    out
}

/// Optimizes with `baseline` and commands the devices, whose true parameters
/// deviate from the commands by `draw` (fractions within `band`).
///
/// With [`Compensation::Twin`] the commands are chosen so the devices run
/// exactly at the optimum. With [`Compensation::GuardBand`] the caps are
/// tightened by `(1 - band) / (1 + band)` and the plan is commanded at
/// `1 / (1 - band)` of its value, so every realization within the band meets
/// latency and caps.
pub fn plan_round(
    users: &[UserProfile],
    cfg: &SystemConfig,
    draw: &DeviationDraw,
    band: f64,
    mode: Compensation,
    baseline: Baseline,
    opts: &BcdOptions,
) -> Result<RoundPlan, ScaError> {
    let (planned, trace, commanded, twin) = match mode {
        Compensation::Twin => {
            let (planned, trace) = baseline.run(users, cfg, opts)?;
            let twin = draw.twin_for_actual(&params(&planned));
            let mut commanded = planned.clone();
            commanded.freq.clone_from(&twin.est_freq);
            commanded.user_power.clone_from(&twin.est_power);
            commanded.uav_power.clone_from(&twin.est_uav_power);
            (planned, trace, commanded, twin)
        }
        Compensation::GuardBand => {
            let shrink = (1.0 - band) / (1.0 + band);
            let tight = SystemConfig {
                f_max_hz: cfg.f_max_hz * shrink,
                q_max_w: cfg.q_max_w * shrink,
                q_uav_max_w: cfg.q_uav_max_w * shrink,
                avg_power_w: cfg.avg_power_w * shrink,
                ..cfg.clone()
            };
            let (planned, trace) = baseline.run(users, &tight, opts)?;
            let lift = 1.0 / (1.0 - band);
            let commanded = scaled(&planned, |_| lift, |_| lift);
            let twin = draw.twin_for_commands(&params(&commanded));
            (planned, trace, commanded, twin)
        }
    };
    let realized = round_totals(&commanded, users, Some(&twin), cfg)?;
    Ok(RoundPlan {
        planned,
        commanded,
        twin,
        realized,
        trace,
    })
}
