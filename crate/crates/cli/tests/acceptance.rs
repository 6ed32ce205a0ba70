//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use curve25519_dalek::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use skyfed_cli::commands::{bench_dim, run_optimize, run_simulate};
use skyfed_cli::{Arms, RunConfig};
use skyfed_core::model::constraint_residuals;
use skyfed_core::sca::{amgm_upper_bilinear, log_lower_bound, optimize_joint, taylor_lower_square, Baseline};
use skyfed_core::zkfed::{
    aggregate, commit, create_update, quantize, scalar_from_i64, setup, verify_aggregate, wire, Aggregation,
    ClientOpening, ClientUpdate, Setup, VerificationPolicy, SCALE,
};
use skyfed_core::{Point2, SystemConfig, UserProfile};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn line(text: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").unwrap();
    out.flush().unwrap();
}

// Descent and convergence of the joint optimizer on the default config.
fn sca_descent() -> Outcome {
    let cfg = RunConfig::default();
    let (_, trace) = optimize_joint(&cfg.users(), &cfg.system, &cfg.bcd_options()).unwrap();
    let energies: Vec<f64> = trace.rows.iter().map(|r| r.energy_j).collect();
    let monotone = energies.windows(2).all(|w| w[1] <= w[0]);
    let n = energies.len();
    let rel = if n >= 2 {
        (energies[n - 2] - energies[n - 1]) / energies[n - 2]
    } else {
        f64::INFINITY
    };
    let outer = trace.outer_iterations();
    outcome(
        monotone && rel < 1e-3 && outer <= 20,
        format!(
            "{} -> {:.3} J, monotone={monotone}, {outer} outer iterations, last relative change {rel:.2e}",
            energies.first().map_or(String::new(), |e| format!("{e:.3}")),
            energies[n - 1]
        ),
    )
}

fn joint_vs_baselines() -> Outcome {
    let cfg = RunConfig::default();
    let energy = |b: Baseline| {
        let (sol, _) = b.run(&cfg.users(), &cfg.system, &cfg.bcd_options()).unwrap();
        skyfed_core::model::total_energy(&sol, &cfg.users(), &cfg.system)
    };
    let joint = energy(Baseline::None);
    let traj = energy(Baseline::FixedTraj);
    let alloc = energy(Baseline::FixedAlloc);
    let vs_traj = 100.0 * (traj - joint) / traj;
    let vs_alloc = 100.0 * (alloc - joint) / alloc;
    outcome(
        joint <= traj && joint <= alloc && vs_traj >= 10.0,
        format!(
            "joint {joint:.3} J, fixed-trajectory {traj:.3} J (-{vs_traj:.1}%), fixed-allocation {alloc:.3} J (-{vs_alloc:.1}%)"
        ),
    )
}

fn dt_ablation() -> Outcome {
    let mut wins = 0;
    let mut pcts = Vec::new();
    for seed in 0..5 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let dt = run_optimize(&cfg, Baseline::None, false).unwrap().summary;
        let guard = run_optimize(&cfg, Baseline::None, true).unwrap().summary;
        let feasible = dt.max_residual <= 1e-6 && guard.max_residual <= 1e-6;
        if feasible && dt.realized_energy_j <= guard.realized_energy_j {
            wins += 1;
        }
        pcts.push(100.0 * (guard.realized_energy_j - dt.realized_energy_j) / guard.realized_energy_j);
    }
    let mean = pcts.iter().sum::<f64>() / pcts.len() as f64;
    let list: Vec<String> = pcts.iter().map(|p| format!("{p:.1}")).collect();
    outcome(
        wins == 5,
        format!(
            "twin <= guard band on {wins}/5 seeds, reduction {}% (mean {mean:.1}%)",
            list.join("/")
        ),
    )
}

fn random_instance(rng: &mut ChaCha20Rng) -> (SystemConfig, Vec<UserProfile>) {
    let n_users = rng.gen_range(1..=3);
    let cfg = SystemConfig {
        n_users,
        k_slots: rng.gen_range(2..=4),
        t_max_s: rng.gen_range(400.0..600.0),
        ..SystemConfig::default()
    };
    let users = (0..n_users)
        .map(|_| UserProfile {
            pos: Point2::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0)),
            data_size: 1000.0,
            cycles_per_sample: 2e7,
            local_iters: 5.0,
            upload_bits: rng.gen_range(5e8..2e9),
            model_bits: rng.gen_range(5e8..2e9),
        })
        .collect();
    (cfg, users)
}

fn soundness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let opts = RunConfig::default().bcd_options();
    let baselines = [Baseline::None, Baseline::FixedTraj, Baseline::FixedAlloc];
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for i in 0..100 {
        let (cfg, users) = random_instance(&mut rng);
        match baselines[i % 3].run(&users, &cfg, &opts) {
            Ok((sol, _)) => {
                let r = constraint_residuals(&sol, &users, &cfg)
                    .iter()
                    .map(|r| r.value)
                    .fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(r);
                if r > 1e-6 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0,
        format!("100 outputs, {failures} violating or failed, worst residual {worst:.3e}"),
    )
}

/// Physics written out independently for the grid search.
struct GridCase {
    cfg: SystemConfig,
    user: UserProfile,
}

impl GridCase {
    fn beta0(&self) -> f64 {
        let noise_w = 10f64.powf(self.cfg.noise_psd_dbm_hz / 10.0) / 1000.0 * self.cfg.bandwidth_hz;
        self.cfg.ref_gain / noise_w
    }

    fn rate(&self, power: f64, d2: f64) -> f64 {
        self.cfg.bandwidth_hz * (1.0 + self.beta0() * power / d2).log2()
    }

    /// Smallest downlink power meeting `budget_s`, if within the per-slot cap.
    fn min_downlink_power(&self, budget_s: f64, d2: f64) -> Option<f64> {
        if budget_s <= 0.0 {
            return None;
        }
        let spectral = self.user.model_bits / budget_s / self.cfg.bandwidth_hz;
        let p = (2f64.powf(spectral) - 1.0) * d2 / self.beta0();
        (p <= self.cfg.q_uav_max_w).then_some(p)
    }

    fn energy(&self, freq: f64, power: f64, d2s: &[f64; 2]) -> Option<f64> {
        let c = &self.cfg;
        let cycles = self.user.data_size * self.user.cycles_per_sample * self.user.local_iters;
        let train_t = cycles / freq;
        let train_e = c.capacitance_coeff * cycles * freq * freq;
        let mut total = 0.0;
        let mut uav_sum = 0.0;
        for &d2 in d2s {
            let up_t = self.user.upload_bits / self.rate(power, d2);
            let down_p = self.min_downlink_power(c.t_max_s - train_t - up_t, d2)?;
            let down_t = self.user.model_bits / self.rate(down_p, d2);
            uav_sum += down_p;
            total += train_e + power * up_t + down_p * down_t;
        }
        (uav_sum / 2.0 <= c.avg_power_w).then_some(total)
    }

    /// Best (freq, power) by a coarse grid refined three times around its minimum.
    fn best_allocation(&self, d2s: &[f64; 2]) -> Option<f64> {
        let cycles = self.user.data_size * self.user.cycles_per_sample * self.user.local_iters;
        let (mut f_lo, mut f_hi) = (cycles / self.cfg.t_max_s, self.cfg.f_max_hz);
        let (mut lq_lo, mut lq_hi) = (1e-4f64.ln(), self.cfg.q_max_w.ln());
        let mut best: Option<(f64, f64, f64)> = None;
        for pts in [120, 41, 41, 41] {
            let f_step = (f_hi - f_lo) / (pts - 1) as f64;
            let q_step = (lq_hi - lq_lo) / (pts - 1) as f64;
            for i in 0..pts {
                let f = f_lo + f_step * i as f64;
                if f <= 0.0 || f > self.cfg.f_max_hz {
                    continue;
                }
                for j in 0..pts {
                    let q = (lq_lo + q_step * j as f64).exp().min(self.cfg.q_max_w);
                    if let Some(e) = self.energy(f, q, d2s) {
                        if best.map_or(true, |b| e < b.0) {
                            best = Some((e, f, q.ln()));
                        }
                    }
                }
            }
            let (_, bf, bq) = best?;
            f_lo = (bf - 2.0 * f_step).max(1.0);
            f_hi = (bf + 2.0 * f_step).min(self.cfg.f_max_hz);
            lq_lo = bq - 2.0 * q_step;
            lq_hi = (bq + 2.0 * q_step).min(self.cfg.q_max_w.ln());
        }
        best.map(|b| b.0)
    }
}

fn grid_oracle() -> Outcome {
    let cfg = SystemConfig {
        n_users: 1,
        k_slots: 2,
        slot_len_s: 2.0,
        v_max_mps: 50.0,
        start_pos: Point2::new(-100.0, 0.0),
        end_pos: Point2::new(100.0, 0.0),
        ..SystemConfig::default()
    };
    let user = UserProfile {
        pos: Point2::new(0.0, 0.0),
        data_size: 1000.0,
        cycles_per_sample: 2e7,
        local_iters: 5.0,
        upload_bits: 2e9,
        model_bits: 2e9,
    };
    let (sol, _) = optimize_joint(std::slice::from_ref(&user), &cfg, &RunConfig::default().bcd_options()).unwrap();
    let solver = skyfed_core::model::total_energy(&sol, std::slice::from_ref(&user), &cfg);

    let case = GridCase { cfg: cfg.clone(), user };
    let l2 = 100.0f64 * 100.0 + 1e-9;
    let sq = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let cells: Vec<(f64, f64)> = (0..=8)
        .flat_map(|i| (0..=4).map(move |j| (-100.0 + 25.0 * i as f64, -50.0 + 25.0 * j as f64)))
        .collect();
    let (start, end) = ((-100.0, 0.0), (100.0, 0.0));
    let h2 = cfg.altitude_m * cfg.altitude_m;
    let mut grid = f64::INFINITY;
    for &w1 in &cells {
        if sq(start, w1) > l2 {
            continue;
        }
        for &w2 in &cells {
            if sq(w1, w2) > l2 || sq(w2, end) > l2 {
                continue;
            }
            let d2s = [sq(w1, (0.0, 0.0)) + h2, sq(w2, (0.0, 0.0)) + h2];
            if let Some(e) = case.best_allocation(&d2s) {
                grid = grid.min(e);
            }
        }
    }
    let gap = (solver - grid).abs() / grid;
    outcome(
        gap <= 0.02,
        format!("solver {solver:.4} J vs grid {grid:.4} J, gap {:.3}%", 100.0 * gap),
    )
}

fn log_uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn bound_properties() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let n = 10_000;
    let mut violations = [0usize; 3];
    for _ in 0..n {
        let (u, r) = (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
        let m = taylor_lower_square(r);
        let tol = 1e-12 * (u * u + r * r).max(1.0);
        if m.eval(u) > u * u + tol || (m.eval(r) - r * r).abs() > tol {
            violations[0] += 1;
        }

        let (t, tr) = (log_uniform(&mut rng, 1e-4, 1e10), log_uniform(&mut rng, 1e-4, 1e10));
        let lb = log_lower_bound(t, tr).unwrap();
        let at_ref = log_lower_bound(tr, tr).unwrap();
        let tol = 1e-12 * t.ln_1p().max(tr.ln_1p()).max(1.0);
        if lb > t.ln_1p() + tol || (at_ref - tr.ln_1p()).abs() > tol {
            violations[1] += 1;
        }

        let (e, l) = (log_uniform(&mut rng, 1e-3, 1e6), log_uniform(&mut rng, 1e-3, 1e6));
        let (er, lr) = (log_uniform(&mut rng, 1e-3, 1e6), log_uniform(&mut rng, 1e-3, 1e6));
        let ub = amgm_upper_bilinear(e, l, er, lr);
        let tight = amgm_upper_bilinear(er, lr, er, lr);
        if ub < e * l * (1.0 - 1e-12) || (tight - er * lr).abs() > 1e-12 * er * lr {
            violations[2] += 1;
        }
    }
    outcome(
        violations == [0; 3],
        format!(
            "{n} samples each; violations taylor {} / log {} / am-gm {}",
            violations[0], violations[1], violations[2]
        ),
    )
}

fn honest_round(
    zk: &Setup,
    round: u64,
    dim: usize,
    rng: &mut ChaCha20Rng,
) -> (Aggregation, Vec<(ClientUpdate, ClientOpening)>) {
    let subs: Vec<_> = zk
        .clients
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
            create_update(&zk.params, key, round, i as u32, &quantize(&v, SCALE), rng.gen())
        })
        .collect();
    let signers = zk
        .clients
        .iter()
        .enumerate()
        .map(|(i, k)| (i as u32, k.verifying_key()))
        .collect();
    let policy = VerificationPolicy::new(f64::INFINITY, signers);
    let agg = aggregate(&zk.params, round, dim, &subs, &policy, &zk.aggregator, rng).unwrap();
    (agg, subs)
}

fn crypto_suite() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);

    let zk = setup(Some(rng.gen()), 1);
    let mut homo_fail = 0;
    for _ in 0..1000 {
        let (w1, w2) = (
            rng.gen_range(-(1i64 << 40)..1 << 40),
            rng.gen_range(-(1i64 << 40)..1 << 40),
        );
        let (s1, s2) = (
            Scalar::from_bytes_mod_order(rng.gen()),
            Scalar::from_bytes_mod_order(rng.gen()),
        );
        let lhs = commit(&scalar_from_i64(w1), &s1, &zk.params) + commit(&scalar_from_i64(w2), &s2, &zk.params);
        let rhs = commit(&scalar_from_i64(w1 + w2), &(s1 + s2), &zk.params);
        if lhs != rhs {
            homo_fail += 1;
        }
    }

    let zk = setup(Some(rng.gen()), 3);
    let (agg, subs) = honest_round(&zk, 4, 8, &mut rng);
    let vk = zk.aggregator.verifying_key();
    let own = &subs[1].0;
    let bytes = wire::encode_broadcast(&agg.broadcast);
    let path_bytes = wire::encode_path(&agg.inclusion_path(own.client_id).unwrap());
    let transcript: Vec<u8> = bytes.iter().chain(&path_bytes).copied().collect();
    let mut accepted_mutants = 0;
    for _ in 0..1000 {
        let mut t = transcript.clone();
        let bit = rng.gen_range(0..t.len() * 8);
        t[bit / 8] ^= 1 << (bit % 8);
        let (b, p) = t.split_at(bytes.len());
        let ok = match (wire::decode_broadcast(b), wire::decode_path(p)) {
            (Ok(b), Ok(p)) => verify_aggregate(&zk.params, &vk, &b, own, &p).is_ok(),
            _ => false,
        };
        if ok {
            accepted_mutants += 1;
        }
    }

    let mut honest_fail = Vec::new();
    for k in [1usize, 2, 5, 16] {
        let zk = setup(Some(rng.gen()), k);
        let (agg, subs) = honest_round(&zk, 1, 16, &mut rng);
        let vk = zk.aggregator.verifying_key();
        let ok = agg.rejected.is_empty()
            && subs.iter().all(|(u, _)| {
                let path = agg.inclusion_path(u.client_id).unwrap();
                verify_aggregate(&zk.params, &vk, &agg.broadcast, u, &path).is_ok()
            });
        if !ok {
            honest_fail.push(k);
        }
    }

    let zk = setup(Some(rng.gen()), 2);
    let sizes: Vec<usize> = [10usize, 1000, 100_000]
        .iter()
        .map(|&d| wire::encode_proof(&honest_round(&zk, 2, d, &mut rng).0.broadcast.proof).len())
        .collect();
    let same = sizes.windows(2).all(|w| w[0] == w[1]);

    outcome(
        homo_fail == 0 && accepted_mutants == 0 && honest_fail.is_empty() && same,
        format!(
            "homomorphism failures {homo_fail}/1000, accepted mutants {accepted_mutants}/1000, honest k rejected {honest_fail:?}, proof bytes {sizes:?}"
        ),
    )
}

fn security_experiment() -> Outcome {
    let cfg = RunConfig {
        timings: false,
        ..RunConfig::default()
    };
    let start = cfg.attack.start_epoch;
    let bad = cfg.attack.malicious_client;
    let (records, _) = run_simulate(&cfg, Arms::from_flags(false, false), true).unwrap();
    let (prot, plain): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.protected);
    let acc_gap = prot.last().unwrap().accuracy - plain.last().unwrap().accuracy;
    let late: Vec<f64> = prot.iter().filter(|r| r.epoch >= 30).map(|r| r.asr).collect();
    let late_asr = late.iter().sum::<f64>() / late.len() as f64;
    let plain_late = plain.iter().filter(|r| r.epoch >= 30).map(|r| r.asr).sum::<f64>() / late.len() as f64;
    let early_clean = prot
        .iter()
        .chain(&plain)
        .filter(|r| r.epoch < start)
        .all(|r| r.asr == 0.0);
    let caught = prot.iter().any(|r| r.epoch >= start && r.rejected_ids.contains(&bad));
    outcome(
        acc_gap >= 0.05 && late_asr < 0.05 && early_clean && caught,
        format!(
            "final accuracy {:.3} vs {:.3} (+{:.1} pp), ASR epochs 30+ {late_asr:.3} vs {plain_late:.3}, ASR 0 before attack {early_clean}, attacker rejected {caught}",
            prot.last().unwrap().accuracy,
            plain.last().unwrap().accuracy,
            100.0 * acc_gap
        ),
    )
}

fn overhead_benchmark() -> Outcome {
    let cfg = RunConfig::default();
    let big = bench_dim(&cfg, 230_000, 2, 2).unwrap();
    let small: Vec<u64> = [10, 1000]
        .iter()
        .map(|&d| bench_dim(&cfg, d, 1, 2).unwrap().overhead_bytes)
        .collect();
    let constant = small.iter().all(|&o| o == big.overhead_bytes);
    let frac = big.overhead_bytes as f64 / big.payload_bytes as f64;
    outcome(
        constant && frac < 0.02 && big.verify_ms_mean <= big.gen_ms_mean,
        format!(
            "overhead {} B of {} B payload ({:.4}%), constant across d {constant}, gen {:.1} ms, verify {:.1} ms",
            big.overhead_bytes,
            big.payload_bytes,
            100.0 * frac,
            big.gen_ms_mean,
            big.verify_ms_mean
        ),
    )
}

fn run_cli(config: &Path, out: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_skyfed"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("SKYFED_OUT", out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        timings: false,
        ..RunConfig::default()
    };
    cfg.system.n_users = 3;
    cfg.system.k_slots = 3;
    cfg.fl.epochs = 25;
    cfg.zkfed.bench_rounds = 2;
    cfg.zkfed.bench_dims = vec![10, 500];
    let config = dir.path().join("run.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();

    let commands: [&[&str]; 5] = [
        &["optimize"],
        &["optimize", "--no-dt", "--baseline", "fixed-traj"],
        &["simulate", "--attack"],
        &["simulate", "--protected"],
        &["bench-zk"],
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        run_cli(&config, &a, args);
        run_cli(&config, &b, args);
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            compared += 1;
            if std::fs::read(a.join(&name)).unwrap() != std::fs::read(b.join(&name)).unwrap() {
                differing.push(format!("{} {}", args.join(" "), name.to_string_lossy()));
            }
        }
    }
    outcome(
        differing.is_empty() && compared > 0,
        format!(
            "{compared} output files over {} commands, differing {differing:?}",
            commands.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("SCA descent and convergence", sca_descent),
        ("joint vs baselines", joint_vs_baselines),
        ("DT ablation", dt_ablation),
        ("inner-approximation soundness", soundness),
        ("grid-search oracle", grid_oracle),
        ("bound properties", bound_properties),
        ("crypto suite", crypto_suite),
        ("security experiment", security_experiment),
        ("overhead benchmark", overhead_benchmark),
        ("determinism", determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        line(&format!(
            "acceptance {id:>2} {} {name}: {} [{:.1} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            t.elapsed().as_secs_f64()
        ));
    }
    line(&format!("acceptance: {failed} failed"));
    if failed > 0 {
        std::process::exit(1);
    }
}
