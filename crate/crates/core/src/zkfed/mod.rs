//! Verifiable aggregation: fixed-point quantization, Pedersen commitments
//! over Ristretto255, signed client updates, a constant-size batched Schnorr
//! proof of correct aggregation, and an inclusion tree over accepted clients.

mod group;
mod merkle;
mod policy;
mod proof;
mod quant;
mod sig;
pub mod wire;

pub use group::{commit, scalar_from_i64, setup, GroupParams, Setup};
pub use merkle::{leaf_hash, Digest, InclusionPath, MerkleTree, Side};
pub use policy::{calibrate_norm_bound, check_policy, PolicyCheck, VerificationPolicy};
pub use proof::{
    aggregate, blindings_from_seed, create_update, verify_aggregate, AggregateError, AggregateProof, Aggregation,
    Broadcast, ClientOpening, ClientUpdate, RejectReason, Rejection, VerifyError,
};
pub use quant::{dequantize, quantize, QuantizedVector, MAX_CLIENTS, SCALE};
pub use sig::{sign, verify_sig, SigError};
