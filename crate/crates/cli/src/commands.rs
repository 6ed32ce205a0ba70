use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use skyfed_core::fl::{run_experiment, AttackConfig, FlError, RoundRecord};
use skyfed_core::plan::{plan_round, Compensation, RoundPlan};
use skyfed_core::sca::{Baseline, BcdStatus};
use skyfed_core::seeds::{sub_seed, sub_seed_bytes};
use skyfed_core::twin::TwinSync;
use skyfed_core::zkfed::{
    aggregate, create_update, quantize, setup, verify_aggregate, wire, VerificationPolicy, SCALE,
};

use crate::config::RunConfig;
use crate::csvio::{write_rows, AllocationRow, EnergyTraceRow, FlMetricsRow, OverheadRow, TrajectoryRow, TwinEventRow};
use crate::error::CliError;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const ALLOCATION_CSV: &str = "allocation.csv";
pub const ENERGY_TRACE_CSV: &str = "energy_trace.csv";
pub const TWIN_EVENTS_CSV: &str = "twin_events.csv";
pub const FL_METRICS_CSV: &str = "fl_metrics.csv";
pub const OVERHEAD_CSV: &str = "overhead.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSummary {
    pub baseline: Baseline,
    pub compensation: Compensation,
    pub status: BcdStatus,
    pub outer_iterations: usize,
    pub planned_energy_j: f64,
    pub realized_energy_j: f64,
    pub realized_latency_s: f64,
    pub t_max_s: f64,
    pub max_residual: f64,
    pub twin_events: usize,
}

pub struct OptimizeReport {
    pub plan: RoundPlan,
    pub events: Vec<TwinEventRow>,
    pub summary: OptimizeSummary,
}

/// Plans one round and replays the twin synchronization over its slots.
pub fn run_optimize(cfg: &RunConfig, baseline: Baseline, no_dt: bool) -> Result<OptimizeReport, CliError> {
    cfg.validate()?;
    let users = cfg.users();
    let sys = &cfg.system;
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, "deviations"));
    let draw = cfg.deviation.draw(sys.n_users, sys.k_slots, &mut rng);
    let mode = if no_dt {
        Compensation::GuardBand
    } else {
        Compensation::Twin
    };
    let plan = plan_round(
        &users,
        sys,
        &draw,
        cfg.deviation.band,
        mode,
        baseline,
        &cfg.bcd_options(),
    )
    .map_err(|e| CliError::Solver(e.to_string()))?;

    let mut events = Vec::new();
    if !no_dt {
        let mut sync = TwinSync::new(cfg.sync, cfg.deviation, sub_seed(cfg.seed, "twin-sync"));
        let mut twin = plan.twin.clone();
        let truth = twin.compensate().map_err(|e| CliError::Solver(e.to_string()))?;
        for k in 1..=sys.k_slots {
            for ev in sync.sync_tick(k as f64 * sys.slot_len_s, &mut twin, &truth) {
                events.extend(ev.changes.iter().map(|c| TwinEventRow {
                    sim_time_s: ev.sim_time_s,
                    entity_id: c.entity_id,
                    field: c.field.as_str().to_string(),
                    old_dev: c.old_dev,
                    new_dev: c.new_dev,
                    delay_ms: ev.delay_ms,
                }));
            }
        }
    }

    let summary = OptimizeSummary {
        baseline,
        compensation: mode,
        status: plan.trace.status,
        outer_iterations: plan.trace.outer_iterations(),
        planned_energy_j: plan.trace.final_energy(),
        realized_energy_j: plan.realized.total_energy_j,
        realized_latency_s: plan.realized.total_latency_s,
        t_max_s: sys.t_max_s,
        max_residual: plan.realized.max_residual(),
        twin_events: events.len(),
    };
    Ok(OptimizeReport { plan, events, summary })
}

/// `skyfed optimize`: writes trajectory, allocation, energy trace, twin
/// events and a summary.
pub fn cmd_optimize(cfg: &RunConfig, baseline: Baseline, no_dt: bool) -> Result<OptimizeSummary, CliError> {
    let report = run_optimize(cfg, baseline, no_dt)?;
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let users = cfg.users();
    let plan = &report.plan;
    let actual = plan.twin.compensate().map_err(|e| CliError::Solver(e.to_string()))?;
    let ms = |v: f64| if cfg.timings { v } else { 0.0 };

    let trajectory: Vec<TrajectoryRow> = plan
        .commanded
        .trajectory
        .waypoints
        .iter()
        .enumerate()
        .map(|(k, w)| TrajectoryRow {
            slot: k,
            x_m: w.x,
            y_m: w.y,
            uav_power_w: actual.uav_power[k],
            uav_power_cmd_w: plan.commanded.uav_power[k],
        })
        .collect();
    let allocation: Vec<AllocationRow> = users
        .iter()
        .enumerate()
        .map(|(n, u)| AllocationRow {
            user: n,
            x_m: u.pos.x,
            y_m: u.pos.y,
            freq_hz: actual.freq[n],
            power_w: actual.user_power[n],
            freq_cmd_hz: plan.commanded.freq[n],
            power_cmd_w: plan.commanded.user_power[n],
            energy_j: plan.realized.users[n].energy_j,
            latency_s: plan.realized.users[n].latency_s,
        })
        .collect();
    let trace: Vec<EnergyTraceRow> = plan
        .trace
        .rows
        .iter()
        .map(|r| EnergyTraceRow {
            outer_iter: r.outer_iter,
            energy_j: r.energy_j,
            feas_residual: r.feas_residual,
            inner_iters: r.inner_iters(),
            ms: ms(r.ms),
        })
        .collect();

    write_rows(&dir.join(TRAJECTORY_CSV), &trajectory)?;
    write_rows(&dir.join(ALLOCATION_CSV), &allocation)?;
    write_rows(&dir.join(ENERGY_TRACE_CSV), &trace)?;
    write_rows(&dir.join(TWIN_EVENTS_CSV), &report.events)?;
    write_json(&dir.join(SUMMARY_JSON), &report.summary)?;
    Ok(report.summary)
}

/// Which arms of the FL experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arms {
    pub protected: bool,
    pub unprotected: bool,
}

impl Arms {
    /// Both arms when neither flag is given.
    pub fn from_flags(protected: bool, unprotected: bool) -> Self {
        if protected || unprotected {
            Self { protected, unprotected }
        } else {
            Self {
                protected: true,
                unprotected: true,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub protected: bool,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Mean attack success rate over epochs from the attack start on.
    pub mean_asr_under_attack: Option<f64>,
    pub rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub attack: Option<AttackConfig>,
    pub epochs: usize,
    pub arms: Vec<ArmSummary>,
}

fn fl_error(e: FlError) -> CliError {
    match e {
        FlError::Config(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    }
}

fn arm_summary(records: &[RoundRecord], protected: bool, attack: Option<&AttackConfig>) -> ArmSummary {
    let last = records.last();
    let mean_asr_under_attack = attack.and_then(|a| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.epoch >= a.start_epoch)
            .map(|r| r.asr)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    });
    ArmSummary {
        protected,
        final_accuracy: last.map_or(0.0, |r| r.accuracy),
        final_loss: last.map_or(0.0, |r| r.loss),
        mean_asr_under_attack,
        rejections: records.iter().map(|r| r.rejected_ids.len()).sum(),
    }
}

fn metrics_row(r: &RoundRecord) -> FlMetricsRow {
    FlMetricsRow {
        epoch: r.epoch,
        protected: r.protected as u8,
        accuracy: r.accuracy,
        loss: r.loss,
        asr: r.asr,
        rejected_ids: r.rejected_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
        payload_bytes: r.payload_bytes,
        overhead_bytes: r.overhead_bytes,
        proof_gen_ms: r.proof_gen_ms,
        proof_verify_ms: r.proof_verify_ms,
    }
}

/// Runs the requested arms in order unprotected, protected.
pub fn run_simulate(
    cfg: &RunConfig,
    arms: Arms,
    attack: bool,
) -> Result<(Vec<RoundRecord>, SimulateSummary), CliError> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    let fl = cfg.fl_config();
    let attack = attack.then_some(&cfg.attack);
    let seed = sub_seed(cfg.seed, "fl");
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for protected in [false, true] {
        if (protected && !arms.protected) || (!protected && !arms.unprotected) {
            continue;
        }
        let recs = run_experiment(&data, &fl, seed, attack, protected, cfg.timings).map_err(fl_error)?;
        summaries.push(arm_summary(&recs, protected, attack));
        records.extend(recs);
    }
    let summary = SimulateSummary {
        attack: attack.cloned(),
        epochs: fl.epochs,
        arms: summaries,
    };
    Ok((records, summary))
}

/// `skyfed simulate`: writes per-epoch metrics and a summary.
pub fn cmd_simulate(cfg: &RunConfig, arms: Arms, attack: bool) -> Result<SimulateSummary, CliError> {
    let (records, summary) = run_simulate(cfg, arms, attack)?;
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let rows: Vec<FlMetricsRow> = records.iter().map(metrics_row).collect();
    write_rows(&dir.join(FL_METRICS_CSV), &rows)?;
    write_json(&dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Times `rounds` protected aggregations of `clients` random updates of
/// dimension `dim`. Verification time is averaged over clients per round.
pub fn bench_dim(cfg: &RunConfig, dim: usize, rounds: usize, clients: usize) -> Result<OverheadRow, CliError> {
    if rounds == 0 {
        return Err(CliError::Config("no rounds".into()));
    }
    if dim == 0 {
        return Err(CliError::Config("dimension must be positive".into()));
    }
    let zk = setup(Some(sub_seed_bytes(cfg.seed, "bench-setup")), clients);
    let signers = zk
        .clients
        .iter()
        .enumerate()
        .map(|(i, k)| (i as u32, k.verifying_key()))
        .collect();
    let policy = VerificationPolicy::new(f64::INFINITY, signers);
    let vk = zk.aggregator.verifying_key();
    let elapsed = |t: Instant| {
        if cfg.timings {
            t.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };

    let mut gen_ms = Vec::with_capacity(rounds);
    let mut verify_ms = Vec::with_capacity(rounds);
    let mut max_path = 0;
    for round in 0..rounds {
        let subs: Vec<_> = (0..clients)
            .map(|i| {
                let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, &format!("bench/{dim}/{round}/{i}")));
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
                create_update(
                    &zk.params,
                    &zk.clients[i],
                    round as u64,
                    i as u32,
                    &quantize(&v, SCALE),
                    rng.gen(),
                )
            })
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, &format!("bench/{dim}/{round}/aggregate")));
        let t = Instant::now();
        let agg = aggregate(&zk.params, round as u64, dim, &subs, &policy, &zk.aggregator, &mut rng)
            .map_err(|e| CliError::Solver(e.to_string()))?;
        gen_ms.push(elapsed(t));

        let mut per_client = Vec::with_capacity(clients);
        for (update, _) in &subs {
            let path = agg
                .inclusion_path(update.client_id)
                .ok_or_else(|| CliError::Solver(format!("client {} not included", update.client_id)))?;
            max_path = max_path.max(wire::encode_path(&path).len());
            let t = Instant::now();
            verify_aggregate(&zk.params, &vk, &agg.broadcast, update, &path)
                .map_err(|e| CliError::Solver(e.to_string()))?;
            per_client.push(elapsed(t));
        }
        verify_ms.push(mean_std(&per_client).0);
    }
    let (gen_ms_mean, gen_ms_std) = mean_std(&gen_ms);
    let (verify_ms_mean, verify_ms_std) = mean_std(&verify_ms);
    let payload_bytes = 4 * dim as u64;
    let overhead_bytes = (64 + wire::PROOF_LEN + max_path) as u64;
    Ok(OverheadRow {
        dim,
        rounds,
        clients,
        payload_bytes,
        commitment_bytes: 32 * dim as u64,
        overhead_bytes,
        proof_bytes: wire::PROOF_LEN as u64,
        overhead_pct: 100.0 * overhead_bytes as f64 / payload_bytes as f64,
        gen_ms_mean,
        gen_ms_std,
        verify_ms_mean,
        verify_ms_std,
    })
}

/// `skyfed bench-zk`: one overhead row per dimension.
pub fn cmd_bench_zk(
    cfg: &RunConfig,
    dims: Option<&[usize]>,
    rounds: Option<usize>,
) -> Result<Vec<OverheadRow>, CliError> {
    cfg.validate()?;
    let dims = dims.unwrap_or(&cfg.zkfed.bench_dims);
    if dims.is_empty() {
        return Err(CliError::Config("no dimensions".into()));
    }
    let rounds = rounds.unwrap_or(cfg.zkfed.bench_rounds);
    let rows = dims
        .iter()
        .map(|&d| bench_dim(cfg, d, rounds, cfg.zkfed.bench_clients))
        .collect::<Result<Vec<_>, _>>()?;
    let dir: PathBuf = cfg.output_dir();
    prepare_dir(&dir)?;
    write_rows(&dir.join(OVERHEAD_CSV), &rows)?;
    Ok(rows)
}
