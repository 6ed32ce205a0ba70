//! Federated training with a softmax linear classifier, a label-flip
//! attacker, and protected (verifiable) or plain aggregation.

mod attack;
mod data;
mod model;
mod sim;

pub use attack::{attack_success_rate, flip_labels, AttackConfig};
pub use data::{generate_synthetic, load_idx, DataError, DataSource, Dataset, Samples};
pub use model::{local_train, LocalModel};
pub use sim::{run_experiment, run_round, Federation, FlConfig, FlError, RoundRecord};
