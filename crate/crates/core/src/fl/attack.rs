use serde::{Deserialize, Serialize};

use super::data::Samples;
use super::model::LocalModel;

/// Label-flip attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub malicious_client: u32,
    pub start_epoch: usize,
    pub source_label: usize,
    pub target_label: usize,
    /// Factor the attacker scales its update by.
    pub boost: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            malicious_client: 0,
            start_epoch: 20,
            source_label: 2,
            target_label: 7,
            boost: 10.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, n_classes: usize) -> Result<(), String> {
        if self.source_label == self.target_label {
            return Err("source and target labels must differ".into());
        }
        if self.source_label >= n_classes || self.target_label >= n_classes {
            return Err(format!("attack labels must be below {n_classes}"));
        }
        if !(self.boost.is_finite() && self.boost > 0.0) {
            return Err("boost must be positive".into());
        }
        Ok(())
    }
}

/// Relabels every source-label sample as the target label.
pub fn flip_labels(shard: &Samples, attack: &AttackConfig) -> Samples {
    let mut out = shard.clone();
    for y in &mut out.y {
        if *y == attack.source_label {
            *y = attack.target_label;
        }
    }
    out
}

/// Share of source-label test samples predicted as the target label;
/// `None` when the test set has no source-label samples.
pub fn attack_success_rate(model: &LocalModel, test: &Samples, attack: &AttackConfig) -> Option<f64> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in 0..test.len() {
        if test.y[i] == attack.source_label {
            total += 1;
            if model.predict(test.row(i)) == attack.target_label {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::generate_synthetic;

    fn shard(labels: &[usize]) -> Samples {
        Samples {
            d_in: 1,
            x: labels.iter().map(|&l| l as f64).collect(),
            y: labels.to_vec(),
        }
    }

    #[test]
    fn flipping() {
        let a = AttackConfig::default();
        let none = shard(&[0, 1, 3]);
        assert_eq!(flip_labels(&none, &a), none);
        assert_eq!(flip_labels(&shard(&[2, 2]), &a).y, vec![7, 7]);
        let mixed = shard(&[2, 0, 2, 7, 5, 2]);
        let flipped = flip_labels(&mixed, &a);
        let changed = mixed.y.iter().zip(&flipped.y).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 3);
        assert_eq!(flipped.x, mixed.x);
    }

    #[test]
    fn asr_extremes() {
        let d = generate_synthetic(1, 10, 10, 40).unwrap();
        let a = AttackConfig::default();
        // bias towards the target wins everywhere
        let mut always = LocalModel::zeros(10, 10, 0.1);
        always.weights[100 + 7] = 1e6;
        assert_eq!(attack_success_rate(&always, &d.test, &a), Some(1.0));
        let mut never = LocalModel::zeros(10, 10, 0.1);
        never.weights[100 + 2] = 1e6;
        assert_eq!(attack_success_rate(&never, &d.test, &a), Some(0.0));
        assert_eq!(attack_success_rate(&never, &shard(&[0, 1]), &a), None);
    }

    #[test]
    fn random_guessing_model_near_tenth() {
        // a model with random weights on isotropic noise guesses roughly uniformly
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let n = 4000;
        let test = Samples {
            d_in: 10,
            x: (0..n * 10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            y: vec![2; n],
        };
        let mut m = LocalModel::zeros(10, 10, 0.1);
        for c in 0..10 {
            m.weights[c * 10 + c] = 1.0;
        }
        let asr = attack_success_rate(&m, &test, &AttackConfig::default()).unwrap();
        // 4 binomial standard deviations around 0.1
        let sd = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((asr - 0.1).abs() <= 4.0 * sd, "{asr}");
    }
}
