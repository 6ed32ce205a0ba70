//! Digital twin: estimated device parameters, their deviations from the
//! physical devices, compensation, and a simulated refresh schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::UserProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("estimate equals deviation: actual value would be zero")]
    Singular,
    #[error("{field}[{index}]: estimate {estimate} minus deviation {deviation} is not positive")]
    NonPositiveActual {
        field: &'static str,
        index: usize,
        estimate: f64,
        deviation: f64,
    },
    #[error("estimate must be positive")]
    NonPositiveEstimate,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// Parameters the devices actually run at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActualParams {
    pub freq: Vec<f64>,
    pub user_power: Vec<f64>,
    pub uav_power: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    pub est_freq: Vec<f64>,
    pub freq_dev: Vec<f64>,
    pub est_power: Vec<f64>,
    pub power_dev: Vec<f64>,
    pub est_uav_power: Vec<f64>,
    pub uav_power_dev: Vec<f64>,
}

impl TwinState {
    /// Twin whose estimates sit `dev` above the actual values.
    pub fn from_actual(
        actual: &ActualParams,
        freq_dev: Vec<f64>,
        power_dev: Vec<f64>,
        uav_power_dev: Vec<f64>,
    ) -> Self {
        let add = |a: &[f64], d: &[f64]| a.iter().zip(d).map(|(a, d)| a + d).collect();
        Self {
            est_freq: add(&actual.freq, &freq_dev),
            est_power: add(&actual.user_power, &power_dev),
            est_uav_power: add(&actual.uav_power, &uav_power_dev),
            freq_dev,
            power_dev,
            uav_power_dev,
        }
    }

    pub fn n_users(&self) -> usize {
        self.est_freq.len()
    }

    pub fn check_dims(&self, n_users: usize, k_slots: usize) -> Result<(), TwinError> {
        let lens = [
            ("est_freq", self.est_freq.len(), n_users),
            ("freq_dev", self.freq_dev.len(), n_users),
            ("est_power", self.est_power.len(), n_users),
            ("power_dev", self.power_dev.len(), n_users),
            ("est_uav_power", self.est_uav_power.len(), k_slots),
            ("uav_power_dev", self.uav_power_dev.len(), k_slots),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(TwinError::Dimension(format!("{name} has {got}, expected {want}")));
            }
        }
        Ok(())
    }

    /// Actual values: estimate minus deviation, componentwise.
    pub fn compensate(&self) -> Result<ActualParams, TwinError> {
        fn sub(field: &'static str, est: &[f64], dev: &[f64]) -> Result<Vec<f64>, TwinError> {
            if est.len() != dev.len() {
                return Err(TwinError::Dimension(format!("{field}: {} vs {}", est.len(), dev.len())));
            }
            est.iter()
                .zip(dev)
                .enumerate()
                .map(|(index, (&estimate, &deviation))| {
                    let v = estimate - deviation;
                    if v > 0.0 {
                        Ok(v)
                    } else {
                        Err(TwinError::NonPositiveActual {
                            field,
                            index,
                            estimate,
                            deviation,
                        })
                    }
                })
                .collect()
        }
        Ok(ActualParams {
            freq: sub("freq", &self.est_freq, &self.freq_dev)?,
            user_power: sub("user_power", &self.est_power, &self.power_dev)?,
            uav_power: sub("uav_power", &self.est_uav_power, &self.uav_power_dev)?,
        })
    }
}

pub fn estimated_train_time(user: &UserProfile, est_freq: f64) -> Result<f64, TwinError> {
    if !(est_freq > 0.0) {
        return Err(TwinError::NonPositiveEstimate);
    }
    Ok(user.workload() / est_freq)
}

/// Extra training time caused by the frequency deviation, so that
/// `estimated_train_time + latency_gap` is the actual training time.
pub fn latency_gap(user: &UserProfile, est_freq: f64, freq_dev: f64) -> Result<f64, TwinError> {
    if est_freq == freq_dev {
        return Err(TwinError::Singular);
    }
    if !(est_freq > 0.0) {
        return Err(TwinError::NonPositiveEstimate);
    }
    let actual = est_freq - freq_dev;
    if !(actual > 0.0) {
        return Err(TwinError::NonPositiveActual {
            field: "freq",
            index: 0,
            estimate: est_freq,
            deviation: freq_dev,
        });
    }
    Ok(user.workload() * freq_dev / (est_freq * actual))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncSchedule {
    pub telemetry_period_s: f64,
    pub user_metrics_period_s: f64,
    pub feedback_delay_s: f64,
}

impl Default for SyncSchedule {
    fn default() -> Self {
        Self {
            telemetry_period_s: 1.5,
            user_metrics_period_s: 5.0,
            feedback_delay_s: 0.2,
        }
    }
}

impl SyncSchedule {
    pub fn validate(&self) -> Result<(), TwinError> {
        if !(1.0..=2.0).contains(&self.telemetry_period_s) {
            return Err(TwinError::Schedule(format!(
                "telemetry_period_s {} outside [1, 2]",
                self.telemetry_period_s
            )));
        }
        if !(self.user_metrics_period_s > 0.0) {
            return Err(TwinError::Schedule("user_metrics_period_s must be positive".into()));
        }
        if !(0.0..=0.2).contains(&self.feedback_delay_s) {
            return Err(TwinError::Schedule(format!(
                "feedback_delay_s {} outside [0, 0.2]",
                self.feedback_delay_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationModel {
    /// Deviation band as a fraction of the estimate.
    pub band: f64,
    /// Random-walk std of the deviation per sqrt(second), relative to the estimate.
    pub drift_std: f64,
    /// Fraction of the deviation left after a refresh.
    pub residual: f64,
}

impl Default for DeviationModel {
    fn default() -> Self {
        Self {
            band: 0.1,
            drift_std: 0.01,
            residual: 0.01,
        }
    }
}

impl DeviationModel {
    pub fn validate(&self) -> Result<(), TwinError> {
        if !(0.0..1.0).contains(&self.band) {
            return Err(TwinError::Schedule(format!(
                "deviation band {} outside [0, 1)",
                self.band
            )));
        }
        if !(self.drift_std >= 0.0 && self.drift_std.is_finite()) {
            return Err(TwinError::Schedule("drift_std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.residual) {
            return Err(TwinError::Schedule("residual must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Draws one relative deviation per entity, uniform in `[-band, band]`.
    pub fn draw(&self, n_users: usize, k_slots: usize, rng: &mut impl Rng) -> DeviationDraw {
        let mut fracs = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if self.band == 0.0 {
                        0.0
                    } else {
                        rng.gen_range(-self.band..=self.band)
                    }
                })
                .collect()
        };
        let freq = fracs(n_users);
        let user_power = fracs(n_users);
        let uav_power = fracs(k_slots);
        DeviationDraw {
            freq,
            user_power,
            uav_power,
        }
    }

    /// Draws deviations within the band around `actual` and returns the twin
    /// that reports them.
    pub fn sample_twin(&self, actual: &ActualParams, rng: &mut impl Rng) -> TwinState {
        self.draw(actual.freq.len(), actual.uav_power.len(), rng)
            .twin_for_actual(actual)
    }
}

/// Relative deviations: a device commanded to `c` runs at `c * (1 - frac)`,
/// so the twin's deviation is `c * frac`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationDraw {
    pub freq: Vec<f64>,
    pub user_power: Vec<f64>,
    pub uav_power: Vec<f64>,
}

impl DeviationDraw {
    /// Twin whose estimates are the commands that realize `actual`.
    pub fn twin_for_actual(&self, actual: &ActualParams) -> TwinState {
        let dev = |a: &[f64], f: &[f64]| a.iter().zip(f).map(|(a, f)| a * f / (1.0 - f)).collect();
        TwinState::from_actual(
            actual,
            dev(&actual.freq, &self.freq),
            dev(&actual.user_power, &self.user_power),
            dev(&actual.uav_power, &self.uav_power),
        )
    }

    /// Twin for devices commanded to `commanded`.
    pub fn twin_for_commands(&self, commanded: &ActualParams) -> TwinState {
        let dev = |c: &[f64], f: &[f64]| c.iter().zip(f).map(|(c, f)| c * f).collect::<Vec<f64>>();
        TwinState {
            est_freq: commanded.freq.clone(),
            freq_dev: dev(&commanded.freq, &self.freq),
            est_power: commanded.user_power.clone(),
            power_dev: dev(&commanded.user_power, &self.user_power),
            est_uav_power: commanded.uav_power.clone(),
            uav_power_dev: dev(&commanded.uav_power, &self.uav_power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefreshKind {
    Telemetry,
    UserMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwinField {
    Freq,
    Power,
    UavPower,
}

impl TwinField {
    pub fn as_str(self) -> &'static str {
        match self {
            TwinField::Freq => "freq",
            TwinField::Power => "power",
            TwinField::UavPower => "uav_power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationChange {
    pub entity_id: usize,
    pub field: TwinField,
    pub old_dev: f64,
    pub new_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub sim_time_s: f64,
    pub kind: RefreshKind,
    pub delay_ms: f64,
    pub changes: Vec<DeviationChange>,
}

/// Drives deviation drift and periodic refreshes of a twin.
#[derive(Debug, Clone)]
pub struct TwinSync {
    schedule: SyncSchedule,
    model: DeviationModel,
    clock_s: f64,
    rng: ChaCha20Rng,
}

impl TwinSync {
    pub fn new(schedule: SyncSchedule, model: DeviationModel, seed: u64) -> Self {
        Self {
            schedule,
            model,
            clock_s: 0.0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    /// Advances the clock to `sim_clock_s`, drifting deviations and applying
    /// every refresh whose boundary falls in the elapsed interval. The twin's
    /// estimates always equal `truth` plus the current deviation.
    pub fn sync_tick(&mut self, sim_clock_s: f64, twin: &mut TwinState, truth: &ActualParams) -> Vec<SyncEvent> {
        assert!(sim_clock_s >= self.clock_s, "sync clock must be monotone");
        let mut boundaries: Vec<(f64, RefreshKind)> = Vec::new();
        for (period, kind) in [
            (self.schedule.telemetry_period_s, RefreshKind::Telemetry),
            (self.schedule.user_metrics_period_s, RefreshKind::UserMetrics),
        ] {
            let mut i = (self.clock_s / period).floor() as u64 + 1;
            while i as f64 * period <= sim_clock_s {
                boundaries.push((i as f64 * period, kind));
                i += 1;
            }
        }
        boundaries.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 as u8).cmp(&(b.1 as u8))));

        let mut events = Vec::with_capacity(boundaries.len());
        for (t, kind) in boundaries {
            self.drift(t - self.clock_s, twin);
            self.clock_s = t;
            let delay_ms = self.rng.gen::<f64>() * self.schedule.feedback_delay_s * 1e3;
            let r = self.model.residual;
            let mut changes = Vec::new();
            let mut shrink = |field: TwinField, devs: &mut Vec<f64>| {
                for (id, d) in devs.iter_mut().enumerate() {
                    let old = *d;
                    *d = old * r;
                    changes.push(DeviationChange {
                        entity_id: id,
                        field,
                        old_dev: old,
                        new_dev: *d,
                    });
                }
            };
            match kind {
                RefreshKind::Telemetry => shrink(TwinField::UavPower, &mut twin.uav_power_dev),
                RefreshKind::UserMetrics => {
                    shrink(TwinField::Freq, &mut twin.freq_dev);
                    shrink(TwinField::Power, &mut twin.power_dev);
                }
            }
            events.push(SyncEvent {
                sim_time_s: t,
                kind,
                delay_ms,
                changes,
            });
        }
        self.drift(sim_clock_s - self.clock_s, twin);
        self.clock_s = sim_clock_s;
        rebuild_estimates(twin, truth);
        events
    }

    fn drift(&mut self, dt: f64, twin: &mut TwinState) {
        if self.model.drift_std == 0.0 || dt <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.model.drift_std * dt.sqrt()).expect("finite std");
        let band = self.model.band;
        for (devs, est) in [
            (&mut twin.freq_dev, &twin.est_freq),
            (&mut twin.power_dev, &twin.est_power),
            (&mut twin.uav_power_dev, &twin.est_uav_power),
        ] {
            for (d, &e) in devs.iter_mut().zip(est.iter()) {
                let scale = e.abs();
                *d = (*d + scale * normal.sample(&mut self.rng)).clamp(-band * scale, band * scale);
            }
        }
    }
}

fn rebuild_estimates(twin: &mut TwinState, truth: &ActualParams) {
    for (e, (a, d)) in twin.est_freq.iter_mut().zip(truth.freq.iter().zip(&twin.freq_dev)) {
        *e = a + d;
    }
    for (e, (a, d)) in twin
        .est_power
        .iter_mut()
        .zip(truth.user_power.iter().zip(&twin.power_dev))
    {
        *e = a + d;
    }
    for (e, (a, d)) in twin
        .est_uav_power
        .iter_mut()
        .zip(truth.uav_power.iter().zip(&twin.uav_power_dev))
    {
        *e = a + d;
    }
}
