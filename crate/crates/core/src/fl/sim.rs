use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::attack::{attack_success_rate, flip_labels, AttackConfig};
use super::data::{DataError, Dataset, Samples};
use super::model::{local_train, LocalModel};
use crate::seeds::{sub_seed, sub_seed_bytes};
use crate::zkfed::{
    aggregate, calibrate_norm_bound, create_update, quantize, setup, verify_aggregate, wire, AggregateError, Setup,
    VerificationPolicy, MAX_CLIENTS, SCALE,
};

#[derive(Debug, Error)]
pub enum FlError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlConfig {
    pub n_clients: usize,
    pub epochs: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Norm bound as a multiple of the median warm-up update norm.
    pub norm_factor: f64,
    /// Rounds whose norms calibrate the bound; warm-up also ends when the
    /// attack starts.
    pub warmup_rounds: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            n_clients: 5,
            epochs: 100,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.1,
            norm_factor: 3.0,
            warmup_rounds: 20,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_clients == 0 || self.n_clients > MAX_CLIENTS {
            return Err(format!("n_clients must lie in [1, {MAX_CLIENTS}]"));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err("lr must be positive".into());
        }
        if !(self.norm_factor.is_finite() && self.norm_factor > 0.0) {
            return Err("norm_factor must be positive".into());
        }
        Ok(())
    }
}

/// Metrics of the global model after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub epoch: usize,
    pub protected: bool,
    pub accuracy: f64,
    pub loss: f64,
    pub asr: f64,
    pub rejected_ids: Vec<u32>,
    /// Plaintext 32-bit weight uploads, all clients.
    pub payload_bytes: u64,
    /// Signatures, aggregate proofs and inclusion paths, all clients.
    pub overhead_bytes: u64,
    pub proof_gen_ms: f64,
    /// Mean over verifying clients.
    pub proof_verify_ms: f64,
    /// Clients whose check of the broadcast failed; the round is then not applied.
    pub verify_failures: Vec<u32>,
}

struct ZkState {
    setup: Setup,
    policy: VerificationPolicy,
    warmup_norms: Vec<f64>,
    calibrated: bool,
}

/// Clients, their data and the global model.
pub struct Federation {
    pub model: LocalModel,
    pub cfg: FlConfig,
    shards: Vec<Samples>,
    test: Samples,
    seed: u64,
    timings: bool,
    zk: ZkState,
}

impl Federation {
    /// Splits the training set into equal IID shards, one per client.
    pub fn new(data: &Dataset, cfg: &FlConfig, seed: u64, timings: bool) -> Result<Self, FlError> {
        cfg.validate().map_err(FlError::Config)?;
        let shards = data.train.shards(cfg.n_clients);
        if shards.iter().any(|s| s.is_empty()) {
            return Err(FlError::Config(format!(
                "{} training samples cannot feed {} clients",
                data.train.len(),
                cfg.n_clients
            )));
        }
        let zk_setup = setup(Some(sub_seed_bytes(seed, "zk-setup")), cfg.n_clients);
        let signers = zk_setup
            .clients
            .iter()
            .enumerate()
            .map(|(i, k)| (i as u32, k.verifying_key()))
            .collect();
        Ok(Self {
            model: LocalModel::zeros(data.d_in(), data.n_classes, cfg.lr),
            cfg: cfg.clone(),
            shards,
            test: data.test.clone(),
            seed,
            timings,
            zk: ZkState {
                setup: zk_setup,
                policy: VerificationPolicy::new(f64::INFINITY, signers),
                warmup_norms: Vec::new(),
                calibrated: false,
            },
        })
    }

    /// Current norm bound of the protected pipeline.
    pub fn norm_bound(&self) -> f64 {
        self.zk.policy.norm_bound
    }

    fn client_delta(&self, id: usize, epoch: usize, attack: Option<&AttackConfig>) -> Vec<f64> {
        let seed = sub_seed(self.seed, &format!("train/{epoch}/{id}"));
        let train = |shard: &Samples| local_train(&self.model, shard, self.cfg.local_epochs, self.cfg.batch_size, seed);
        match attack {
            Some(a) if epoch >= a.start_epoch && a.malicious_client as usize == id => {
                let mut d = train(&flip_labels(&self.shards[id], a));
                d.iter_mut().for_each(|v| *v *= a.boost);
                d
            }
            _ => train(&self.shards[id]),
        }
    }

    fn elapsed_ms(&self, t: Instant) -> f64 {
        if self.timings {
            t.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}

/// One global round. Protected rounds commit, sign, screen, aggregate,
/// prove and have every accepted client verify; plain rounds average every
/// update as is.
pub fn run_round(
    fed: &mut Federation,
    epoch: usize,
    attack: Option<&AttackConfig>,
    protected: bool,
) -> Result<RoundRecord, FlError> {
    let n = fed.cfg.n_clients;
    let dim = fed.model.dim();
    let deltas: Vec<Vec<f64>> = (0..n).map(|id| fed.client_delta(id, epoch, attack)).collect();
    let payload_bytes = (n * dim * 4) as u64;
    let mut rec = RoundRecord {
        epoch,
        protected,
        accuracy: 0.0,
        loss: 0.0,
        asr: 0.0,
        rejected_ids: Vec::new(),
        payload_bytes,
        overhead_bytes: 0,
        proof_gen_ms: 0.0,
        proof_verify_ms: 0.0,
        verify_failures: Vec::new(),
    };

    if protected {
        let warmup_end = fed.cfg.warmup_rounds.min(attack.map_or(usize::MAX, |a| a.start_epoch));
        if epoch >= warmup_end && !fed.zk.calibrated {
            if let Some(bound) = calibrate_norm_bound(&fed.zk.warmup_norms, fed.cfg.norm_factor) {
                if bound > 0.0 {
                    fed.zk.policy.norm_bound = bound;
                }
            }
            fed.zk.calibrated = true;
        }
        let zk = &fed.zk;
        let subs: Vec<_> = deltas
            .iter()
            .enumerate()
            .map(|(id, d)| {
                let q = quantize(d, SCALE);
                let blind = sub_seed_bytes(fed.seed, &format!("blind/{epoch}/{id}"));
                create_update(
                    &zk.setup.params,
                    &zk.setup.clients[id],
                    epoch as u64,
                    id as u32,
                    &q,
                    blind,
                )
            })
            .collect();
        let mut rng = ChaCha20Rng::from_seed(sub_seed_bytes(fed.seed, &format!("aggregate/{epoch}")));
        let t = Instant::now();
        let result = aggregate(
            &zk.setup.params,
            epoch as u64,
            dim,
            &subs,
            &zk.policy,
            &zk.setup.aggregator,
            &mut rng,
        );
        rec.proof_gen_ms = fed.elapsed_ms(t);
        rec.overhead_bytes = (n * 64) as u64;
        match result {
            Ok(agg) => {
                rec.rejected_ids = agg.rejected.iter().map(|r| r.client_id).collect();
                let vk = zk.setup.aggregator.verifying_key();
                let mut verify_ms = 0.0;
                for (update, _) in subs
                    .iter()
                    .filter(|(u, _)| agg.broadcast.accepted.contains(&u.client_id))
                {
                    let path = agg
                        .inclusion_path(update.client_id)
                        .expect("accepted client has a path");
                    rec.overhead_bytes += (wire::PROOF_LEN + wire::encode_path(&path).len()) as u64;
                    let t = Instant::now();
                    let ok = verify_aggregate(&zk.setup.params, &vk, &agg.broadcast, update, &path);
                    verify_ms += fed.elapsed_ms(t);
                    if ok.is_err() {
                        rec.verify_failures.push(update.client_id);
                    }
                }
                rec.overhead_bytes += (agg.rejected.len() * wire::PROOF_LEN) as u64;
                rec.proof_verify_ms = verify_ms / agg.broadcast.accepted.len() as f64;
                if epoch < warmup_end {
                    fed.zk.warmup_norms.extend_from_slice(&agg.norms);
                }
                if rec.verify_failures.is_empty() {
                    fed.model.apply_delta(&agg.broadcast.mean(SCALE));
                }
            }
            Err(AggregateError::NoAcceptedClients { rejected }) => {
                rec.rejected_ids = rejected.iter().map(|r| r.client_id).collect();
            }
        }
    } else {
        let inv = 1.0 / n as f64;
        let mut mean = vec![0.0; dim];
        for d in &deltas {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        fed.model.apply_delta(&mean);
    }
    fed.model.epoch = epoch + 1;

    let (accuracy, loss) = fed.model.evaluate(&fed.test);
    rec.accuracy = accuracy;
    rec.loss = loss;
    let labels = attack.copied().unwrap_or_default();
    rec.asr = attack_success_rate(&fed.model, &fed.test, &labels).unwrap_or(0.0);
    Ok(rec)
}

/// Runs `cfg.epochs` rounds from a zero model.
pub fn run_experiment(
    data: &Dataset,
    cfg: &FlConfig,
    seed: u64,
    attack: Option<&AttackConfig>,
    protected: bool,
    timings: bool,
) -> Result<Vec<RoundRecord>, FlError> {
    if let Some(a) = attack {
        a.validate(data.n_classes).map_err(FlError::Config)?;
        if a.malicious_client as usize >= cfg.n_clients {
            return Err(FlError::Config(format!(
                "malicious client {} outside {} clients",
                a.malicious_client, cfg.n_clients
            )));
        }
    }
    let labels = attack.copied().unwrap_or_default();
    if cfg.epochs > 0 && !data.test.y.contains(&labels.source_label) {
        return Err(FlError::Config("test set has no source-label samples".into()));
    }
    let mut fed = Federation::new(data, cfg, seed, timings)?;
    (0..cfg.epochs)
        .map(|epoch| run_round(&mut fed, epoch, attack, protected))
        .collect()
}
