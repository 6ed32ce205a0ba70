use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use skyfed_core::fl::{generate_synthetic, load_idx, AttackConfig, DataError, DataSource, Dataset, FlConfig};
use skyfed_core::sca::BcdOptions;
use skyfed_core::seeds::sub_seed;
use skyfed_core::twin::DeviationModel;
use skyfed_core::{Point2, SyncSchedule, SystemConfig, UserProfile};

use crate::error::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUT_ENV: &str = "SKYFED_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Wall-clock columns are written as 0 when off, making reruns byte-identical.
    pub timings: bool,
    pub system: SystemConfig,
    pub users: UserGen,
    pub optimizer: OptimizerConfig,
    pub deviation: DeviationModel,
    pub sync: SyncSchedule,
    pub fl: FlSection,
    pub zkfed: ZkSection,
    pub attack: AttackConfig,
    pub dataset: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            timings: true,
            system: SystemConfig::default(),
            users: UserGen::default(),
            optimizer: OptimizerConfig::default(),
            deviation: DeviationModel::default(),
            sync: SyncSchedule::default(),
            fl: FlSection::default(),
            zkfed: ZkSection::default(),
            attack: AttackConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

/// Users placed uniformly at random in `[0, area_m)^2`, all with the same workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserGen {
    pub area_m: f64,
    pub data_size: f64,
    pub cycles_per_sample: f64,
    pub local_iters: f64,
    pub upload_bits: f64,
    pub model_bits: f64,
}

impl Default for UserGen {
    fn default() -> Self {
        Self {
            area_m: 500.0,
            data_size: 1000.0,
            cycles_per_sample: 2e7,
            local_iters: 5.0,
            upload_bits: 2e9,
            model_bits: 2e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub feas_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = BcdOptions::default();
        Self {
            outer_tol: d.outer_tol,
            max_outer: d.max_outer,
            inner_tol: d.inner_tol,
            max_inner: d.max_inner,
            feas_tol: d.feas_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlSection {
    pub n_clients: usize,
    pub epochs: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FlSection {
    fn default() -> Self {
        let d = FlConfig::default();
        Self {
            n_clients: d.n_clients,
            epochs: d.epochs,
            local_epochs: d.local_epochs,
            batch_size: d.batch_size,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZkSection {
    /// Norm bound as a multiple of the median warm-up update norm.
    pub norm_factor: f64,
    pub warmup_rounds: usize,
    pub bench_dims: Vec<usize>,
    pub bench_rounds: usize,
    pub bench_clients: usize,
}

impl Default for ZkSection {
    fn default() -> Self {
        let d = FlConfig::default();
        Self {
            norm_factor: d.norm_factor,
            warmup_rounds: d.warmup_rounds,
            bench_dims: vec![10, 1000, 100_000],
            bench_rounds: 5,
            bench_clients: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_classes: usize,
    /// Synthetic only.
    pub d_in: usize,
    /// Synthetic only; test gets half as many.
    pub n_per_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    pub train_limit: usize,
    pub test_limit: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            n_classes: 10,
            d_in: 10,
            n_per_class: 200,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: 2000,
            test_limit: 1000,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// Reads and validates a TOML file; unknown keys are errors.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.system.validate().map_err(|e| cfg(&e))?;
        let u = &self.users;
        for (name, v) in [
            ("users.area_m", u.area_m),
            ("users.data_size", u.data_size),
            ("users.cycles_per_sample", u.cycles_per_sample),
            ("users.local_iters", u.local_iters),
            ("users.upload_bits", u.upload_bits),
            ("users.model_bits", u.model_bits),
        ] {
            positive(name, v)?;
        }
        let o = &self.optimizer;
        positive("optimizer.outer_tol", o.outer_tol)?;
        positive("optimizer.inner_tol", o.inner_tol)?;
        positive("optimizer.feas_tol", o.feas_tol)?;
        if o.max_outer == 0 || o.max_inner == 0 {
            return Err(CliError::Config(
                "optimizer.max_outer and max_inner must be at least 1".into(),
            ));
        }
        self.deviation.validate().map_err(|e| cfg(&e))?;
        self.sync.validate().map_err(|e| cfg(&e))?;
        self.fl_config().validate().map_err(CliError::Config)?;
        self.attack.validate(self.dataset.n_classes).map_err(CliError::Config)?;
        if self.attack.malicious_client as usize >= self.fl.n_clients {
            return Err(CliError::Config(format!(
                "attack.malicious_client {} outside {} clients",
                self.attack.malicious_client, self.fl.n_clients
            )));
        }
        let d = &self.dataset;
        if d.n_classes < 2 {
            return Err(CliError::Config("dataset.n_classes must be at least 2".into()));
        }
        match d.kind {
            DatasetKind::Synthetic => {
                if d.d_in < d.n_classes {
                    return Err(CliError::Config("dataset.d_in must be at least n_classes".into()));
                }
                if d.n_per_class == 0 {
                    return Err(CliError::Config("dataset.n_per_class must be positive".into()));
                }
            }
            DatasetKind::Idx => {
                if [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels]
                    .iter()
                    .any(|p| p.is_none())
                {
                    return Err(CliError::Config(
                        "idx dataset needs train_images, train_labels, test_images and test_labels".into(),
                    ));
                }
            }
        }
        if self.zkfed.bench_clients == 0 {
            return Err(CliError::Config("zkfed.bench_clients must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn bcd_options(&self) -> BcdOptions {
        BcdOptions {
            outer_tol: self.optimizer.outer_tol,
            max_outer: self.optimizer.max_outer,
            inner_tol: self.optimizer.inner_tol,
            max_inner: self.optimizer.max_inner,
            feas_tol: self.optimizer.feas_tol,
            ..BcdOptions::default()
        }
    }

    pub fn fl_config(&self) -> FlConfig {
        FlConfig {
            n_clients: self.fl.n_clients,
            epochs: self.fl.epochs,
            local_epochs: self.fl.local_epochs,
            batch_size: self.fl.batch_size,
            lr: self.fl.lr,
            norm_factor: self.zkfed.norm_factor,
            warmup_rounds: self.zkfed.warmup_rounds,
        }
    }

    pub fn users(&self) -> Vec<UserProfile> {
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(self.seed, "users"));
        let u = &self.users;
        (0..self.system.n_users)
            .map(|_| UserProfile {
                pos: Point2::new(rng.gen_range(0.0..u.area_m), rng.gen_range(0.0..u.area_m)),
                data_size: u.data_size,
                cycles_per_sample: u.cycles_per_sample,
                local_iters: u.local_iters,
                upload_bits: u.upload_bits,
                model_bits: u.model_bits,
            })
            .collect()
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        let d = &self.dataset;
        let data_err = |e: DataError| match e {
            DataError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        };
        match d.kind {
            DatasetKind::Synthetic => {
                generate_synthetic(sub_seed(self.seed, "data"), d.n_classes, d.d_in, d.n_per_class).map_err(data_err)
            }
            DatasetKind::Idx => {
                let path = |p: &Option<PathBuf>| p.clone().expect("validated");
                let train =
                    load_idx(&path(&d.train_images), &path(&d.train_labels), d.train_limit).map_err(data_err)?;
                let test = load_idx(&path(&d.test_images), &path(&d.test_labels), d.test_limit).map_err(data_err)?;
                Dataset::new(d.n_classes, train, test, DataSource::IdxFile).map_err(data_err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("sed = 3"), Err(CliError::Config(_))));
        assert!(matches!(
            RunConfig::parse("[system]\nk_slot = 3"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[system.start_pos]\nx = 1.0\ny = 2.0\nz = 0.0"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn ranges_checked() {
        for bad in [
            "[system]\nt_max_s = -1.0",
            "[sync]\ntelemetry_period_s = 3.0",
            "[deviation]\nband = 1.5",
            "[attack]\ntarget_label = 2",
            "[attack]\nmalicious_client = 5",
            "[fl]\nn_clients = 0",
            "[optimizer]\nmax_outer = 0",
            "[dataset]\nkind = \"idx\"",
            "[users]\narea_m = 0.0",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn users_follow_seed() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 2, ..a.clone() };
        assert_eq!(a.users(), a.users());
        assert_ne!(a.users(), b.users());
        assert!(a.users().iter().all(|u| (0.0..500.0).contains(&u.pos.x)));
    }
}
