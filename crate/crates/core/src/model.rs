//! Physical system model: geometry, channel, rates, per-phase time and energy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::twin::TwinState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist_sq(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (other.x - self.x), self.y + t * (other.y - self.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n_users: usize,
    pub k_slots: usize,
    pub altitude_m: f64,
    pub slot_len_s: f64,
    pub v_max_mps: f64,
    pub start_pos: Point2,
    pub end_pos: Point2,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub ref_gain: f64,
    pub t_max_s: f64,
    pub f_max_hz: f64,
    pub q_max_w: f64,
    pub q_uav_max_w: f64,
    pub avg_power_w: f64,
    pub capacitance_coeff: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_users: 5,
            k_slots: 5,
            altitude_m: 50.0,
            slot_len_s: 100.0,
            v_max_mps: 50.0,
            start_pos: Point2::new(0.0, 0.0),
            end_pos: Point2::new(70.0, 70.0),
            bandwidth_hz: 1e6,
            noise_psd_dbm_hz: -174.0,
            ref_gain: 1e-3,
            t_max_s: 500.0,
            f_max_hz: 1e9,
            q_max_w: 50.0,
            q_uav_max_w: 100.0,
            avg_power_w: 75.0,
            capacitance_coeff: 1e-28,
        }
    }
}

impl SystemConfig {
    pub fn max_step_m(&self) -> f64 {
        self.v_max_mps * self.slot_len_s
    }

    /// Noise power over one user's band, in watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf(self.noise_psd_dbm_hz / 10.0) * 1e-3 * self.bandwidth_hz
    }

    /// Reference SNR at 1 m per watt of transmit power.
    pub fn beta0(&self) -> f64 {
        self.ref_gain / self.noise_power_w()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("altitude_m", self.altitude_m),
            ("slot_len_s", self.slot_len_s),
            ("v_max_mps", self.v_max_mps),
            ("bandwidth_hz", self.bandwidth_hz),
            ("ref_gain", self.ref_gain),
            ("t_max_s", self.t_max_s),
            ("f_max_hz", self.f_max_hz),
            ("q_max_w", self.q_max_w),
            ("q_uav_max_w", self.q_uav_max_w),
            ("avg_power_w", self.avg_power_w),
            ("capacitance_coeff", self.capacitance_coeff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            return Err(ModelError::Invalid("noise_psd_dbm_hz must be finite".into()));
        }
        if self.k_slots == 0 {
            return Err(ModelError::Invalid("k_slots must be at least 1".into()));
        }
        let reach = self.max_step_m() * (self.k_slots + 1) as f64;
        if self.start_pos.dist_sq(self.end_pos).sqrt() > reach {
            return Err(ModelError::Invalid(format!(
                "end_pos unreachable: distance exceeds {reach} m"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub pos: Point2,
    /// Local sample count.
    pub data_size: f64,
    pub cycles_per_sample: f64,
    pub local_iters: f64,
    /// Uplink payload in bits.
    pub upload_bits: f64,
    /// Downlink payload in bits.
    pub model_bits: f64,
}

impl UserProfile {
    /// Cycles needed for one round of local training.
    pub fn workload(&self) -> f64 {
        self.cycles_per_sample * self.local_iters * self.data_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("data_size", self.data_size),
            ("cycles_per_sample", self.cycles_per_sample),
            ("local_iters", self.local_iters),
            ("upload_bits", self.upload_bits),
            ("model_bits", self.model_bits),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Invalid(format!("user {name} must be positive, got {v}")));
            }
        }
        if !(self.pos.x.is_finite() && self.pos.y.is_finite()) {
            return Err(ModelError::Invalid("user position must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavTrajectory {
    pub waypoints: Vec<Point2>,
}

impl UavTrajectory {
    /// Evenly spaced waypoints strictly between start and end.
    pub fn straight_line(start: Point2, end: Point2, k_slots: usize) -> Self {
        let waypoints = (1..=k_slots)
            .map(|k| start.lerp(end, k as f64 / (k_slots + 1) as f64))
            .collect();
        Self { waypoints }
    }

    /// Squared leg lengths minus L², start leg first, end leg last.
    pub fn step_residuals(&self, cfg: &SystemConfig) -> Vec<f64> {
        let l2 = cfg.max_step_m().powi(2);
        let mut out = Vec::with_capacity(self.waypoints.len() + 1);
        let mut prev = cfg.start_pos;
        for &w in &self.waypoints {
            out.push(prev.dist_sq(w) - l2);
            prev = w;
        }
        out.push(prev.dist_sq(cfg.end_pos) - l2);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub trajectory: UavTrajectory,
    pub freq: Vec<f64>,
    pub user_power: Vec<f64>,
    pub uav_power: Vec<f64>,
}

impl AllocationSolution {
    /// Straight-line trajectory with every variable at half its cap.
    pub fn midpoint(cfg: &SystemConfig, n_users: usize) -> Self {
        Self {
            trajectory: UavTrajectory::straight_line(cfg.start_pos, cfg.end_pos, cfg.k_slots),
            freq: vec![0.5 * cfg.f_max_hz; n_users],
            user_power: vec![0.5 * cfg.q_max_w; n_users],
            uav_power: vec![0.5 * cfg.q_uav_max_w; cfg.k_slots],
        }
    }

    pub fn check_dims(&self, n_users: usize, cfg: &SystemConfig) -> Result<(), ModelError> {
        let dims = [
            ("freq", self.freq.len(), n_users),
            ("user_power", self.user_power.len(), n_users),
            ("uav_power", self.uav_power.len(), cfg.k_slots),
            ("waypoints", self.trajectory.waypoints.len(), cfg.k_slots),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(ModelError::Dimension { what, got, expected });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseCost {
    pub time_s: f64,
    pub energy_j: f64,
}

impl PhaseCost {
    pub const ZERO: PhaseCost = PhaseCost {
        time_s: 0.0,
        energy_j: 0.0,
    };
}

/// Squared 3-D distance between the UAV at `uav` and a ground user at `user`.
pub fn dist_sq_3d(uav: Point2, user: Point2, cfg: &SystemConfig) -> f64 {
    uav.dist_sq(user) + cfg.altitude_m * cfg.altitude_m
}

pub fn channel_gain(uav: Point2, user: Point2, cfg: &SystemConfig) -> f64 {
    cfg.ref_gain / dist_sq_3d(uav, user, cfg)
}

/// Shannon rate for transmit power `power_w` over squared distance `dist_sq`.
fn link_rate(dist_sq: f64, power_w: f64, cfg: &SystemConfig) -> f64 {
    cfg.bandwidth_hz * (cfg.beta0() * power_w / dist_sq).ln_1p() / std::f64::consts::LN_2
}

pub fn uplink_rate(dist_sq: f64, power_w: f64, cfg: &SystemConfig) -> f64 {
    link_rate(dist_sq, power_w, cfg)
}

pub fn downlink_rate(dist_sq: f64, uav_power_w: f64, cfg: &SystemConfig) -> f64 {
    link_rate(dist_sq, uav_power_w, cfg)
}

fn train_cost(user: &UserProfile, freq_hz: f64, cfg: &SystemConfig) -> PhaseCost {
    let cycles = user.workload();
    if cycles == 0.0 {
        return PhaseCost::ZERO;
    }
    PhaseCost {
        time_s: cycles / freq_hz,
        energy_j: cfg.capacitance_coeff * cycles * freq_hz * freq_hz,
    }
}

pub(crate) fn transfer_cost(bits: f64, power_w: f64, dist_sq: f64, cfg: &SystemConfig) -> PhaseCost {
    if bits == 0.0 {
        return PhaseCost::ZERO;
    }
    let time_s = bits / link_rate(dist_sq, power_w, cfg);
    PhaseCost {
        time_s,
        energy_j: power_w * time_s,
    }
}

pub fn train_time_energy(user: &UserProfile, freq_hz: f64, cfg: &SystemConfig) -> Result<PhaseCost, ModelError> {
    if user.workload() == 0.0 {
        return Ok(PhaseCost::ZERO);
    }
    if !(freq_hz > 0.0) {
        return Err(ModelError::Domain("frequency must be positive"));
    }
    Ok(train_cost(user, freq_hz, cfg))
}

pub fn upload_time_energy(
    user: &UserProfile,
    power_w: f64,
    dist_sq: f64,
    cfg: &SystemConfig,
) -> Result<PhaseCost, ModelError> {
    if user.upload_bits == 0.0 {
        return Ok(PhaseCost::ZERO);
    }
    if !(power_w > 0.0) {
        return Err(ModelError::Domain("user transmit power must be positive"));
    }
    Ok(transfer_cost(user.upload_bits, power_w, dist_sq, cfg))
}

pub fn download_time_energy(
    user: &UserProfile,
    uav_power_w: f64,
    dist_sq: f64,
    cfg: &SystemConfig,
) -> Result<PhaseCost, ModelError> {
    if user.model_bits == 0.0 {
        return Ok(PhaseCost::ZERO);
    }
    if !(uav_power_w > 0.0) {
        return Err(ModelError::Domain("UAV transmit power must be positive"));
    }
    Ok(transfer_cost(user.model_bits, uav_power_w, dist_sq, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    FreqLower {
        user: usize,
    },
    FreqUpper {
        user: usize,
    },
    PowerLower {
        user: usize,
    },
    PowerUpper {
        user: usize,
    },
    UavPowerLower {
        slot: usize,
    },
    UavPowerUpper {
        slot: usize,
    },
    AvgUavPower,
    Latency {
        user: usize,
        slot: usize,
    },
    /// Leg `leg` ends at waypoint `leg`; leg K ends at the final position.
    Step {
        leg: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub kind: ConstraintKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    /// Training cost of one round.
    pub train: PhaseCost,
    /// Per-slot upload cost.
    pub upload: Vec<PhaseCost>,
    /// Per-slot download cost.
    pub download: Vec<PhaseCost>,
    /// Energy summed over all slots.
    pub energy_j: f64,
    /// Largest per-slot round latency.
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLatencyReport {
    pub users: Vec<UserReport>,
    pub total_energy_j: f64,
    pub total_latency_s: f64,
    pub constraint_residuals: Vec<Residual>,
}

impl EnergyLatencyReport {
    pub fn max_residual(&self) -> f64 {
        self.constraint_residuals
            .iter()
            .map(|r| r.value)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn user_report(user: &UserProfile, freq: f64, power: f64, sol: &AllocationSolution, cfg: &SystemConfig) -> UserReport {
    let train = train_cost(user, freq, cfg);
    let mut upload = Vec::with_capacity(cfg.k_slots);
    let mut download = Vec::with_capacity(cfg.k_slots);
    let mut energy_j = 0.0;
    let mut latency_s: f64 = 0.0;
    for (k, &w) in sol.trajectory.waypoints.iter().enumerate() {
        let d2 = dist_sq_3d(w, user.pos, cfg);
        let up = transfer_cost(user.upload_bits, power, d2, cfg);
        let down = transfer_cost(user.model_bits, sol.uav_power[k], d2, cfg);
        energy_j += train.energy_j + up.energy_j + down.energy_j;
        latency_s = latency_s.max(train.time_s + up.time_s + down.time_s);
        upload.push(up);
        download.push(down);
    }
    UserReport {
        train,
        upload,
        download,
        energy_j,
        latency_s,
    }
}

/// Energy and latency of a solution.
///
/// With `twin` present, the solution's frequencies and powers are read as the
/// commands sent to the devices and the twin's deviations are subtracted to
/// obtain what the devices actually run at.
pub fn round_totals(
    solution: &AllocationSolution,
    users: &[UserProfile],
    twin: Option<&TwinState>,
    cfg: &SystemConfig,
) -> Result<EnergyLatencyReport, ModelError> {
    solution.check_dims(users.len(), cfg)?;
    let actual;
    let sol = match twin {
        Some(t) => {
            t.check_dims(users.len(), cfg.k_slots)
                .map_err(|e| ModelError::Invalid(e.to_string()))?;
            let mut s = solution.clone();
            for n in 0..users.len() {
                s.freq[n] -= t.freq_dev[n];
                s.user_power[n] -= t.power_dev[n];
            }
            for k in 0..cfg.k_slots {
                s.uav_power[k] -= t.uav_power_dev[k];
            }
            actual = s;
            &actual
        }
        None => solution,
    };
    let reports: Vec<UserReport> = users
        .iter()
        .enumerate()
        .map(|(n, u)| user_report(u, sol.freq[n], sol.user_power[n], sol, cfg))
        .collect();
    let total_energy_j = reports.iter().map(|r| r.energy_j).sum();
    let total_latency_s = reports.iter().map(|r| r.latency_s).fold(0.0, f64::max);
    Ok(EnergyLatencyReport {
        users: reports,
        total_energy_j,
        total_latency_s,
        constraint_residuals: residuals_unchecked(sol, users, cfg),
    })
}

/// Total energy of a dimensionally consistent solution.
pub fn total_energy(sol: &AllocationSolution, users: &[UserProfile], cfg: &SystemConfig) -> f64 {
    users
        .iter()
        .enumerate()
        .map(|(n, u)| user_report(u, sol.freq[n], sol.user_power[n], sol, cfg).energy_j)
        .sum()
}

/// One signed residual per constraint; a residual at or below zero is satisfied.
///
/// Returns an empty vector when the solution's dimensions do not match.
pub fn constraint_residuals(solution: &AllocationSolution, users: &[UserProfile], cfg: &SystemConfig) -> Vec<Residual> {
    if solution.check_dims(users.len(), cfg).is_err() {
        return Vec::new();
    }
    residuals_unchecked(solution, users, cfg)
}

fn residuals_unchecked(sol: &AllocationSolution, users: &[UserProfile], cfg: &SystemConfig) -> Vec<Residual> {
    use ConstraintKind::*;
    let mut out = Vec::new();
    let mut push = |kind, value| out.push(Residual { kind, value });
    for (n, user) in users.iter().enumerate() {
        push(FreqLower { user: n }, -sol.freq[n]);
        push(FreqUpper { user: n }, sol.freq[n] - cfg.f_max_hz);
        push(PowerLower { user: n }, -sol.user_power[n]);
        push(PowerUpper { user: n }, sol.user_power[n] - cfg.q_max_w);
        let train = train_cost(user, sol.freq[n], cfg);
        for (k, &w) in sol.trajectory.waypoints.iter().enumerate() {
            let d2 = dist_sq_3d(w, user.pos, cfg);
            let up = transfer_cost(user.upload_bits, sol.user_power[n], d2, cfg);
            let down = transfer_cost(user.model_bits, sol.uav_power[k], d2, cfg);
            let t = train.time_s + up.time_s + down.time_s;
            let value = if t.is_nan() { f64::INFINITY } else { t - cfg.t_max_s };
            push(Latency { user: n, slot: k }, value);
        }
    }
    for (k, &p) in sol.uav_power.iter().enumerate() {
        push(UavPowerLower { slot: k }, -p);
        push(UavPowerUpper { slot: k }, p - cfg.q_uav_max_w);
    }
    if !sol.uav_power.is_empty() {
        let avg = sol.uav_power.iter().sum::<f64>() / sol.uav_power.len() as f64;
        push(AvgUavPower, avg - cfg.avg_power_w);
    }
    for (leg, v) in sol.trajectory.step_residuals(cfg).into_iter().enumerate() {
        push(Step { leg }, v);
    }
    out
}
