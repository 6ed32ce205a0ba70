use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A CSV row type with a fixed header.
pub trait CsvRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

/// Writes the header, then one line per row (the header alone when empty).
pub fn write_rows<T: CsvRow>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::io(path.display(), e);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(err)?;
    w.write_record(T::HEADER).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_rows<T: CsvRow>(path: &Path) -> Result<Vec<T>, CliError> {
    let err = |e: csv::Error| CliError::io(path.display(), e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?;
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(CliError::Io(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub slot: usize,
    pub x_m: f64,
    pub y_m: f64,
    /// Power the UAV actually transmits with.
    pub uav_power_w: f64,
    /// Power commanded through the twin.
    pub uav_power_cmd_w: f64,
}

impl CsvRow for TrajectoryRow {
    const HEADER: &'static [&'static str] = &["slot", "x_m", "y_m", "uav_power_w", "uav_power_cmd_w"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub user: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub freq_hz: f64,
    pub power_w: f64,
    pub freq_cmd_hz: f64,
    pub power_cmd_w: f64,
    pub energy_j: f64,
    pub latency_s: f64,
}

impl CsvRow for AllocationRow {
    const HEADER: &'static [&'static str] = &[
        "user",
        "x_m",
        "y_m",
        "freq_hz",
        "power_w",
        "freq_cmd_hz",
        "power_cmd_w",
        "energy_j",
        "latency_s",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTraceRow {
    pub outer_iter: usize,
    pub energy_j: f64,
    pub feas_residual: f64,
    pub inner_iters: usize,
    pub ms: f64,
}

impl CsvRow for EnergyTraceRow {
    const HEADER: &'static [&'static str] = &["outer_iter", "energy_j", "feas_residual", "inner_iters", "ms"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinEventRow {
    pub sim_time_s: f64,
    pub entity_id: usize,
    pub field: String,
    pub old_dev: f64,
    pub new_dev: f64,
    pub delay_ms: f64,
}

impl CsvRow for TwinEventRow {
    const HEADER: &'static [&'static str] = &["sim_time_s", "entity_id", "field", "old_dev", "new_dev", "delay_ms"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlMetricsRow {
    pub epoch: usize,
    pub protected: u8,
    pub accuracy: f64,
    pub loss: f64,
    pub asr: f64,
    /// Semicolon-separated client ids.
    pub rejected_ids: String,
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
    pub proof_gen_ms: f64,
    pub proof_verify_ms: f64,
}

impl CsvRow for FlMetricsRow {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "protected",
        "accuracy",
        "loss",
        "asr",
        "rejected_ids",
        "payload_bytes",
        "overhead_bytes",
        "proof_gen_ms",
        "proof_verify_ms",
    ];
}

impl FlMetricsRow {
    pub fn rejected(&self) -> Vec<u32> {
        self.rejected_ids
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub dim: usize,
    pub rounds: usize,
    pub clients: usize,
    /// Plaintext 32-bit weights of one client.
    pub payload_bytes: u64,
    /// One client's commitment vector.
    pub commitment_bytes: u64,
    /// Client signature, aggregate proof and longest inclusion path.
    pub overhead_bytes: u64,
    pub proof_bytes: u64,
    pub overhead_pct: f64,
    pub gen_ms_mean: f64,
    pub gen_ms_std: f64,
    pub verify_ms_mean: f64,
    pub verify_ms_std: f64,
}

impl CsvRow for OverheadRow {
    const HEADER: &'static [&'static str] = &[
        "dim",
        "rounds",
        "clients",
        "payload_bytes",
        "commitment_bytes",
        "overhead_bytes",
        "proof_bytes",
        "overhead_pct",
        "gen_ms_mean",
        "gen_ms_std",
        "verify_ms_mean",
        "verify_ms_std",
    ];
}
