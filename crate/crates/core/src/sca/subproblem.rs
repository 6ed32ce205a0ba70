//! Convex inner approximations of the energy problem around a feasible point.
//!
//! One builder covers every block: each of the user variables (frequency and
//! power), the UAV powers and the waypoints is either a decision variable or
//! held at its value in the reference solution.

use std::f64::consts::LN_2;

use thiserror::Error;

use super::bounds::{log_bound_coeffs, taylor_lower_square};
use super::convex::{ConvexFn, LinearForm, SubproblemSpec};
use crate::model::{dist_sq_3d, transfer_cost, AllocationSolution, SystemConfig, UserProfile};

/// Floor applied to every linearization value.
pub const LIN_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("fixed phases alone exceed the latency cap for user {user} in slot {slot}")]
    LatencyBudget { user: usize, slot: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Per-(user, slot) values of every convexified quantity, stored user-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint {
    pub k_slots: usize,
    /// Uplink SNR slack.
    pub theta: Vec<f64>,
    /// Uplink spectral-efficiency slack (bit/s/Hz).
    pub psi: Vec<f64>,
    /// Uplink energy slack (J).
    pub z: Vec<f64>,
    /// Squared-distance slack (m^2).
    pub lambda: Vec<f64>,
    /// Downlink SNR slack.
    pub eta: Vec<f64>,
    /// Downlink spectral-efficiency slack.
    pub xi: Vec<f64>,
    /// Downlink energy slack (J).
    pub omega: Vec<f64>,
}

impl LinearizationPoint {
    /// Values that make every surrogate tight at `sol`.
    pub fn tight(sol: &AllocationSolution, users: &[UserProfile], cfg: &SystemConfig) -> Self {
        let k_slots = cfg.k_slots;
        let len = users.len() * k_slots;
        let b0 = cfg.beta0();
        let mut lp = Self {
            k_slots,
            theta: Vec::with_capacity(len),
            psi: Vec::with_capacity(len),
            z: Vec::with_capacity(len),
            lambda: Vec::with_capacity(len),
            eta: Vec::with_capacity(len),
            xi: Vec::with_capacity(len),
            omega: Vec::with_capacity(len),
        };
        let fl = |v: f64| v.max(LIN_FLOOR);
        for (n, u) in users.iter().enumerate() {
            let q = sol.user_power[n];
            let beta = u.upload_bits / cfg.bandwidth_hz;
            let gamma = u.model_bits / cfg.bandwidth_hz;
            for k in 0..k_slots {
                let d2 = dist_sq_3d(sol.trajectory.waypoints[k], u.pos, cfg);
                let theta = fl(b0 * q / d2);
                let psi = fl(theta.ln_1p() / LN_2);
                lp.theta.push(theta);
                lp.psi.push(psi);
                lp.z.push(fl(beta * q / psi));
                let qu = sol.uav_power[k];
                let eta = fl(b0 * qu / d2);
                let xi = fl(eta.ln_1p() / LN_2);
                lp.lambda.push(fl(d2));
                lp.eta.push(eta);
                lp.xi.push(xi);
                lp.omega.push(fl(gamma * qu / xi));
            }
        }
        lp
    }
}

/// Which quantities are decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockVars {
    pub user: bool,
    pub uav_power: bool,
    pub trajectory: bool,
}

impl BlockVars {
    /// Frequencies and all transmit powers under a fixed trajectory.
    pub const POWERS: BlockVars = BlockVars {
        user: true,
        uav_power: true,
        trajectory: false,
    };
    /// Waypoints and UAV powers under fixed user frequencies and powers.
    pub const UAV: BlockVars = BlockVars {
        user: false,
        uav_power: true,
        trajectory: true,
    };
}

/// Indices of one (user, slot) pair's link slacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSlacks {
    pub snr: usize,
    pub rate: usize,
    pub energy: usize,
}

/// Variable positions in a built program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    pub freq: Vec<usize>,
    pub power: Vec<usize>,
    pub uav_power: Vec<usize>,
    pub waypoints: Vec<(usize, usize)>,
    /// Per (user, slot), user-major; present when the link varies.
    pub uplink: Vec<Option<LinkSlacks>>,
    pub downlink: Vec<Option<LinkSlacks>>,
    pub lambda: Vec<Option<usize>>,
}

impl Layout {
    /// Writes the decision variables of `x` into `sol`.
    pub fn apply(&self, x: &[f64], sol: &mut AllocationSolution) {
        for (n, &i) in self.freq.iter().enumerate() {
            sol.freq[n] = x[i];
        }
        for (n, &i) in self.power.iter().enumerate() {
            sol.user_power[n] = x[i];
        }
        for (k, &i) in self.uav_power.iter().enumerate() {
            sol.uav_power[k] = x[i];
        }
        for (k, &(xi, yi)) in self.waypoints.iter().enumerate() {
            sol.trajectory.waypoints[k].x = x[xi];
            sol.trajectory.waypoints[k].y = x[yi];
        }
    }
}

/// Growing variable list with bounds, scales and a starting point.
struct VarSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
    scale: Vec<f64>,
    init: Vec<f64>,
}

impl VarSet {
    fn add(&mut self, init: f64, lower: f64, upper: f64, scale: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.scale.push(scale);
        self.init.push(init);
        self.init.len() - 1
    }

    fn positive(&mut self, init: f64) -> usize {
        self.add(init, 0.0, f64::INFINITY, init)
    }
}

/// Either a decision variable or a fixed value.
#[derive(Clone, Copy)]
enum Term {
    Var(usize),
    Fixed(f64),
}

impl Term {
    /// Adds `a * term` to `f`.
    fn add_to(self, f: ConvexFn, a: f64) -> ConvexFn {
        match self {
            Term::Var(i) => f.linear(i, a),
            Term::Fixed(v) => f.constant(a * v),
        }
    }
}

/// Restriction of `a * b >= rhs` around `(a_ref, b_ref)`: the returned
/// function `rhs + 1/4 (l a - b/l)^2 - 1/4 taylor(l a + b/l)` must stay
/// non-positive. The caller passes `rhs` in `seed`.
fn bilinear_restriction(seed: ConvexFn, a: usize, b: usize, a_ref: f64, b_ref: f64) -> ConvexFn {
    let l = (b_ref / a_ref).sqrt();
    let minorant = taylor_lower_square(l * a_ref + b_ref / l);
    seed.square(0.25, LinearForm::new(vec![(a, l), (b, -1.0 / l)], 0.0))
        .linear(a, -0.25 * minorant.slope * l)
        .linear(b, -0.25 * minorant.slope / l)
        .constant(-0.25 * minorant.intercept)
}

/// `rate * ln2 <= log_lower_bound(snr)`.
fn log_restriction(rate: usize, snr: usize, snr_ref: f64) -> ConvexFn {
    let (c, d) = log_bound_coeffs(snr_ref);
    ConvexFn::new().linear(rate, LN_2).constant(-c).reciprocal(snr, d)
}

/// `0.5 (b_ref/a_ref) a^2 + 0.5 (a_ref/b_ref) b^2`, an upper bound of `a * b`.
fn amgm(f: ConvexFn, a: usize, b: usize, a_ref: f64, b_ref: f64) -> ConvexFn {
    f.square(0.5 * b_ref / a_ref, LinearForm::new(vec![(a, 1.0)], 0.0))
        .square(0.5 * a_ref / b_ref, LinearForm::new(vec![(b, 1.0)], 0.0))
}

/// Builds the convex restriction for the variables selected in `vars`,
/// holding everything else at its value in `fixed`.
///
/// Returns the program, the variable layout and the starting point at which
/// every surrogate is tight.
pub fn build_program(
    users: &[UserProfile],
    fixed: &AllocationSolution,
    lin: &LinearizationPoint,
    cfg: &SystemConfig,
    vars: BlockVars,
) -> Result<(SubproblemSpec, Layout, Vec<f64>), BuildError> {
    let k_slots = cfg.k_slots;
    let pairs = users.len() * k_slots;
    if lin.theta.len() != pairs || lin.lambda.len() != pairs {
        return Err(BuildError::Dimension("linearization point size".into()));
    }
    fixed
        .check_dims(users.len(), cfg)
        .map_err(|e| BuildError::Dimension(e.to_string()))?;
    let b0 = cfg.beta0();
    let h2 = cfg.altitude_m * cfg.altitude_m;
    let mut vs = VarSet {
        lower: Vec::new(),
        upper: Vec::new(),
        scale: Vec::new(),
        init: Vec::new(),
    };
    let mut lay = Layout::default();
    let mut objective = ConvexFn::new();
    let mut offset = 0.0;
    let mut constraints = Vec::new();

    let mut freq = Vec::with_capacity(users.len());
    let mut power = Vec::with_capacity(users.len());
    for n in 0..users.len() {
        if vars.user {
            let f = vs.add(fixed.freq[n], 0.0, cfg.f_max_hz, fixed.freq[n].max(1e-6 * cfg.f_max_hz));
            let q = vs.add(
                fixed.user_power[n],
                0.0,
                cfg.q_max_w,
                fixed.user_power[n].max(1e-9 * cfg.q_max_w),
            );
            lay.freq.push(f);
            lay.power.push(q);
            freq.push(Term::Var(f));
            power.push(Term::Var(q));
        } else {
            freq.push(Term::Fixed(fixed.freq[n]));
            power.push(Term::Fixed(fixed.user_power[n]));
        }
    }

    let mut uav_power = Vec::with_capacity(k_slots);
    if vars.uav_power {
        let mut avg = ConvexFn::new().constant(-cfg.avg_power_w);
        for k in 0..k_slots {
            let p = fixed.uav_power[k];
            let v = vs.add(p, 0.0, cfg.q_uav_max_w, p.max(1e-9 * cfg.q_uav_max_w));
            lay.uav_power.push(v);
            uav_power.push(Term::Var(v));
            avg = avg.linear(v, 1.0 / k_slots as f64);
        }
        constraints.push(avg);
    } else {
        uav_power.extend(fixed.uav_power.iter().map(|&p| Term::Fixed(p)));
    }

    if vars.trajectory {
        let coord_scale = (0.1 * cfg.max_step_m()).max(cfg.altitude_m);
        for w in &fixed.trajectory.waypoints {
            let x = vs.add(w.x, f64::NEG_INFINITY, f64::INFINITY, w.x.abs().max(coord_scale));
            let y = vs.add(w.y, f64::NEG_INFINITY, f64::INFINITY, w.y.abs().max(coord_scale));
            lay.waypoints.push((x, y));
        }
        let l2 = cfg.max_step_m().powi(2);
        let mut legs: Vec<(Option<(usize, usize)>, Option<(usize, usize)>)> = Vec::new();
        let mut prev = None;
        for &w in &lay.waypoints {
            legs.push((prev, Some(w)));
            prev = Some(w);
        }
        legs.push((prev, None));
        for (from, to) in legs {
            let (mut cx, mut cy) = (Vec::new(), Vec::new());
            let (mut ox, mut oy) = (0.0, 0.0);
            match from {
                Some((x, y)) => {
                    cx.push((x, -1.0));
                    cy.push((y, -1.0));
                }
                None => {
                    ox -= cfg.start_pos.x;
                    oy -= cfg.start_pos.y;
                }
            }
            match to {
                Some((x, y)) => {
                    cx.push((x, 1.0));
                    cy.push((y, 1.0));
                }
                None => {
                    ox += cfg.end_pos.x;
                    oy += cfg.end_pos.y;
                }
            }
            constraints.push(
                ConvexFn::new()
                    .constant(-l2)
                    .square(1.0, LinearForm::new(cx, ox))
                    .square(1.0, LinearForm::new(cy, oy)),
            );
        }
    }

    for (n, u) in users.iter().enumerate() {
        let cid = u.workload();
        let beta = u.upload_bits / cfg.bandwidth_hz;
        let gamma = u.model_bits / cfg.bandwidth_hz;
        match freq[n] {
            Term::Var(f) => {
                objective = objective.square(
                    k_slots as f64 * cfg.capacitance_coeff * cid,
                    LinearForm::new(vec![(f, 1.0)], 0.0),
                );
            }
            Term::Fixed(f) => offset += k_slots as f64 * cfg.capacitance_coeff * cid * f * f,
        }
        for k in 0..k_slots {
            let idx = n * k_slots + k;
            let w = fixed.trajectory.waypoints[k];
            let d2_fixed = dist_sq_3d(w, u.pos, cfg);
            let mut latency = ConvexFn::new().constant(-cfg.t_max_s);
            let mut latency_fixed = 0.0;
            match freq[n] {
                Term::Var(f) => latency = latency.reciprocal(f, cid),
                Term::Fixed(f) => latency_fixed += cid / f,
            }

            let lambda = if vars.trajectory {
                let l = vs.positive(lin.lambda[idx]);
                let (x, y) = lay.waypoints[k];
                constraints.push(
                    ConvexFn::new()
                        .square(1.0, LinearForm::new(vec![(x, 1.0)], -u.pos.x))
                        .square(1.0, LinearForm::new(vec![(y, 1.0)], -u.pos.y))
                        .constant(h2)
                        .linear(l, -1.0),
                );
                Some(l)
            } else {
                None
            };
            lay.lambda.push(lambda);

            // One link: SNR slack below b0 * p / d^2, rate slack below
            // log2(1 + snr), energy slack above bits/B * p / rate.
            let mut link = |p: Term,
                            bits_per_hz: f64,
                            snr_ref: f64,
                            rate_ref: f64,
                            energy_ref: f64,
                            constraints: &mut Vec<ConvexFn>,
                            objective: &mut ConvexFn,
                            latency: &mut ConvexFn|
             -> Option<LinkSlacks> {
                let varies = matches!(p, Term::Var(_)) || lambda.is_some();
                if !varies {
                    let Term::Fixed(pw) = p else { unreachable!() };
                    let c = transfer_cost(bits_per_hz * cfg.bandwidth_hz, pw, d2_fixed, cfg);
                    offset += c.energy_j;
                    latency_fixed += c.time_s;
                    return None;
                }
                let snr = vs.positive(snr_ref);
                let rate = vs.positive(rate_ref);
                let energy = vs.positive(energy_ref);
                let power_side = p.add_to(ConvexFn::new(), -b0);
                constraints.push(match lambda {
                    Some(l) => amgm(power_side, snr, l, snr_ref, lin.lambda[idx]),
                    None => power_side.linear(snr, d2_fixed),
                });
                constraints.push(log_restriction(rate, snr, snr_ref));
                constraints.push(bilinear_restriction(
                    p.add_to(ConvexFn::new(), bits_per_hz),
                    energy,
                    rate,
                    energy_ref,
                    rate_ref,
                ));
                *objective = std::mem::take(objective).linear(energy, 1.0);
                *latency = std::mem::take(latency).reciprocal(rate, bits_per_hz);
                Some(LinkSlacks { snr, rate, energy })
            };
            let up = link(
                power[n],
                beta,
                lin.theta[idx],
                lin.psi[idx],
                lin.z[idx],
                &mut constraints,
                &mut objective,
                &mut latency,
            );
            let down = link(
                uav_power[k],
                gamma,
                lin.eta[idx],
                lin.xi[idx],
                lin.omega[idx],
                &mut constraints,
                &mut objective,
                &mut latency,
            );
            lay.uplink.push(up);
            lay.downlink.push(down);
            if latency.linear.is_empty() && latency.reciprocals.is_empty() {
                // Nothing in this pair's latency varies.
                if latency_fixed > cfg.t_max_s {
                    return Err(BuildError::LatencyBudget { user: n, slot: k });
                }
                continue;
            }
            if !(latency_fixed < cfg.t_max_s) {
                return Err(BuildError::LatencyBudget { user: n, slot: k });
            }
            constraints.push(latency.constant(latency_fixed));
        }
    }

    let n_vars = vs.init.len();
    let spec = SubproblemSpec {
        n_vars,
        objective,
        objective_offset: offset,
        constraints,
        lower: vs.lower,
        upper: vs.upper,
        scale: vs.scale,
    };
    Ok((spec, lay, vs.init))
}

/// Frequencies, user powers and UAV powers under the fixed trajectory of `fixed`.
pub fn build_subproblem1(
    users: &[UserProfile],
    fixed: &AllocationSolution,
    lin: &LinearizationPoint,
    cfg: &SystemConfig,
) -> Result<(SubproblemSpec, Layout, Vec<f64>), BuildError> {
    build_program(users, fixed, lin, cfg, BlockVars::POWERS)
}

/// Waypoints and UAV powers under the fixed frequencies and user powers of `fixed`.
pub fn build_subproblem2(
    users: &[UserProfile],
    fixed: &AllocationSolution,
    lin: &LinearizationPoint,
    cfg: &SystemConfig,
) -> Result<(SubproblemSpec, Layout, Vec<f64>), BuildError> {
    build_program(users, fixed, lin, cfg, BlockVars::UAV)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constraint_residuals, total_energy, Point2};
    use crate::sca::convex::{solve_convex, SolveOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_case(n: usize, seed: u64) -> (SystemConfig, Vec<UserProfile>) {
        let cfg = SystemConfig {
            n_users: n,
            k_slots: 3,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..n)
            .map(|_| UserProfile {
                pos: Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0)),
                data_size: 1000.0,
                cycles_per_sample: 2e7,
                local_iters: 5.0,
                upload_bits: 2e9,
                model_bits: 2e9,
            })
            .collect();
        (cfg, users)
    }

    const ALL_BLOCKS: [BlockVars; 4] = [
        BlockVars::POWERS,
        BlockVars::UAV,
        BlockVars {
            user: true,
            uav_power: false,
            trajectory: false,
        },
        BlockVars {
            user: true,
            uav_power: true,
            trajectory: true,
        },
    ];

    #[test]
    fn payload_ratio_is_seconds() {
        let u = UserProfile {
            pos: Point2::default(),
            data_size: 1.0,
            cycles_per_sample: 1.0,
            local_iters: 1.0,
            upload_bits: 1e6,
            model_bits: 1e6,
        };
        let cfg = SystemConfig::default();
        assert_eq!(u.upload_bits / cfg.bandwidth_hz, 1.0);
        assert_eq!(u.model_bits / cfg.bandwidth_hz, 1.0);
    }

    #[test]
    fn tight_at_linearization_point() {
        let (cfg, users) = small_case(2, 1);
        let sol = AllocationSolution::midpoint(&cfg, 2);
        let lin = LinearizationPoint::tight(&sol, &users, &cfg);
        let e = total_energy(&sol, &users, &cfg);
        for vars in ALL_BLOCKS {
            let (spec, _, init) = build_program(&users, &sol, &lin, &cfg, vars).unwrap();
            let worst = spec
                .constraints
                .iter()
                .map(|g| g.eval(&init) / g.magnitude(&init))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= 1e-12, "{vars:?}: {worst}");
            let v = spec.objective_value(&init);
            assert!((v - e).abs() <= 1e-12 * e, "{vars:?}: {v} vs {e}");
        }
    }

    #[test]
    fn latency_budget_error() {
        let (cfg, users) = small_case(1, 3);
        let mut sol = AllocationSolution::midpoint(&cfg, 1);
        sol.uav_power = vec![1e-12; cfg.k_slots];
        let lin = LinearizationPoint::tight(&sol, &users, &cfg);
        let only_user = BlockVars {
            user: true,
            uav_power: false,
            trajectory: false,
        };
        assert!(matches!(
            build_program(&users, &sol, &lin, &cfg, only_user),
            Err(BuildError::LatencyBudget { .. })
        ));
    }

    #[test]
    fn constraints_are_convex() {
        let (cfg, users) = small_case(2, 4);
        let sol = AllocationSolution::midpoint(&cfg, 2);
        let lin = LinearizationPoint::tight(&sol, &users, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for vars in ALL_BLOCKS {
            let (spec, _, init) = build_program(&users, &sol, &lin, &cfg, vars).unwrap();
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..spec.n_vars)
                    .map(|j| {
                        let s = spec.scale[j];
                        let lo = if spec.lower[j].is_finite() {
                            spec.lower[j] + 1e-3 * s
                        } else {
                            init[j] - 5.0 * s
                        };
                        let hi = if spec.upper[j].is_finite() {
                            spec.upper[j]
                        } else {
                            lo.max(init[j]) + 10.0 * s
                        };
                        rng.gen_range(lo..hi)
                    })
                    .collect()
            };
            for g in spec.constraints.iter().chain(std::iter::once(&spec.objective)) {
                for _ in 0..100 {
                    let a = draw(&mut rng);
                    let b = draw(&mut rng);
                    let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                    let (ga, gb, gm) = (g.eval(&a), g.eval(&b), g.eval(&m));
                    let tol = 1e-9 * (ga.abs() + gb.abs()).max(1.0);
                    assert!(gm <= 0.5 * ga + 0.5 * gb + tol, "{gm} > avg of {ga}, {gb}");
                }
            }
        }
    }

    #[test]
    fn solutions_satisfy_original_constraints() {
        let opts = SolveOptions::default();
        for seed in 0..4 {
            let (cfg, users) = small_case(2, 10 + seed);
            let mut sol = AllocationSolution::midpoint(&cfg, 2);
            for vars in [BlockVars::POWERS, BlockVars::UAV, BlockVars::POWERS] {
                let lin = LinearizationPoint::tight(&sol, &users, &cfg);
                let before = total_energy(&sol, &users, &cfg);
                let (spec, lay, init) = build_program(&users, &sol, &lin, &cfg, vars).unwrap();
                let (x, _) = solve_convex(&spec, &init, &opts).unwrap();
                lay.apply(&x, &mut sol);
                let worst = constraint_residuals(&sol, &users, &cfg)
                    .iter()
                    .map(|r| r.value)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(worst <= 1e-6, "{vars:?}: residual {worst}");
                let after = total_energy(&sol, &users, &cfg);
                assert!(after <= spec.objective_value(&x) * (1.0 + 1e-12));
                assert!(after <= before * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn distance_slack_binds_at_optimum() {
        let (cfg, users) = small_case(2, 5);
        let sol = AllocationSolution::midpoint(&cfg, 2);
        let lin = LinearizationPoint::tight(&sol, &users, &cfg);
        let (spec, lay, init) = build_subproblem2(&users, &sol, &lin, &cfg).unwrap();
        let (x, _) = solve_convex(&spec, &init, &SolveOptions::default()).unwrap();
        for (n, u) in users.iter().enumerate() {
            for k in 0..cfg.k_slots {
                let (xi, yi) = lay.waypoints[k];
                let d2 = (x[xi] - u.pos.x).powi(2) + (x[yi] - u.pos.y).powi(2) + cfg.altitude_m.powi(2);
                let slack = x[lay.lambda[n * cfg.k_slots + k].unwrap()];
                assert!((slack - d2).abs() <= 1e-5 * d2, "user {n} slot {k}: {slack} vs {d2}");
            }
        }
    }
}
