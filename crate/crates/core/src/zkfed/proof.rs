use std::collections::BTreeMap;

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{Identity, IsIdentity, VartimeMultiscalarMul};
use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256, Sha512};
use thiserror::Error;

use super::group::{commit, scalar_from_i64, GroupParams};
use super::merkle::{leaf_hash, Digest, InclusionPath, MerkleTree};
use super::policy::{check_policy, VerificationPolicy};
use super::quant::QuantizedVector;
use super::sig::{sign, verify_sig};

/// What a client publishes for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientUpdate {
    pub round: u64,
    pub client_id: u32,
    /// One Pedersen commitment per coordinate.
    pub commitments: Vec<CompressedRistretto>,
    /// Over the round, the client id and the commitment digest.
    pub signature: Signature,
}

impl ClientUpdate {
    pub fn dim(&self) -> usize {
        self.commitments.len()
    }

    pub fn commitment_digest(&self) -> Digest {
        commitment_digest(self.round, self.client_id, &self.commitments)
    }

    pub fn signed_message(&self) -> Vec<u8> {
        client_message(self.round, self.client_id, &self.commitment_digest())
    }

    pub fn leaf(&self) -> Digest {
        leaf_hash(self.client_id, &self.commitment_digest())
    }
}

fn commitment_digest(round: u64, client_id: u32, commitments: &[CompressedRistretto]) -> Digest {
    let mut h = Sha256::new();
    h.update(b"skyfed/commitments/");
    h.update(round.to_le_bytes());
    h.update(client_id.to_le_bytes());
    h.update((commitments.len() as u32).to_le_bytes());
    for c in commitments {
        h.update(c.as_bytes());
    }
    h.finalize().into()
}

fn client_message(round: u64, client_id: u32, digest: &Digest) -> Vec<u8> {
    let mut m = b"skyfed/client-update/".to_vec();
    m.extend_from_slice(&round.to_le_bytes());
    m.extend_from_slice(&client_id.to_le_bytes());
    m.extend_from_slice(digest);
    m
}

/// What a client hands the aggregator privately so it can open the commitments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientOpening {
    pub values: QuantizedVector,
    pub blinding_seed: [u8; 32],
}

/// Per-coordinate blindings expanded from a client's seed.
pub fn blindings_from_seed(seed: &[u8; 32], round: u64, client_id: u32, dim: usize) -> Vec<Scalar> {
    let mut h = Sha256::new();
    h.update(b"skyfed/blinding/");
    h.update(seed);
    h.update(round.to_le_bytes());
    h.update(client_id.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| Scalar::random(&mut rng)).collect()
}

/// Commits to `values` and signs the commitments.
pub fn create_update(
    params: &GroupParams,
    key: &SigningKey,
    round: u64,
    client_id: u32,
    values: &QuantizedVector,
    blinding_seed: [u8; 32],
) -> (ClientUpdate, ClientOpening) {
    let blind = blindings_from_seed(&blinding_seed, round, client_id, values.dim());
    let commitments: Vec<CompressedRistretto> = values
        .values
        .iter()
        .zip(&blind)
        .map(|(&w, s)| commit(&scalar_from_i64(w as i64), s, params).compress())
        .collect();
    let digest = commitment_digest(round, client_id, &commitments);
    let signature = sign(&client_message(round, client_id, &digest), key);
    (
        ClientUpdate {
            round,
            client_id,
            commitments,
            signature,
        },
        ClientOpening {
            values: values.clone(),
            blinding_seed,
        },
    )
}

/// Constant-size part of the broadcast: a Schnorr proof that the aggregator
/// knows the aggregate blindings, batched over all coordinates, plus its
/// signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateProof {
    pub round: u64,
    pub inclusion_root: Digest,
    pub n_accepted: u32,
    pub announcement: CompressedRistretto,
    pub challenge: Scalar,
    pub response: Scalar,
    pub signature: Signature,
}

/// Everything the aggregator sends back to every client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Broadcast {
    pub proof: AggregateProof,
    /// Accepted client ids, ascending; the inclusion tree's leaf order.
    pub accepted: Vec<u32>,
    /// Coordinatewise product of the accepted commitments.
    pub commitments: Vec<CompressedRistretto>,
    /// Sum of the accepted quantized updates.
    pub plaintext: Vec<i64>,
}

impl Broadcast {
    pub fn dim(&self) -> usize {
        self.plaintext.len()
    }

    /// Average of the accepted updates in real units.
    pub fn mean(&self, scale: f64) -> Vec<f64> {
        let n = self.accepted.len().max(1) as f64;
        self.plaintext.iter().map(|&w| w as f64 / scale / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    UnknownClient,
    WrongRound,
    Dimension { got: usize, expected: usize },
    BadSignature,
    Duplicate,
    OpeningMismatch,
    NormBound { norm: f64, bound: f64 },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UnknownClient => "unknown-client",
            RejectReason::WrongRound => "wrong-round",
            RejectReason::Dimension { .. } => "dimension",
            RejectReason::BadSignature => "bad-signature",
            RejectReason::Duplicate => "duplicate",
            RejectReason::OpeningMismatch => "opening-mismatch",
            RejectReason::NormBound { .. } => "norm-bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    pub client_id: u32,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("no client update was accepted ({} rejected)", rejected.len())]
    NoAcceptedClients { rejected: Vec<Rejection> },
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub broadcast: Broadcast,
    pub rejected: Vec<Rejection>,
    /// Per accepted client, in `broadcast.accepted` order.
    pub norms: Vec<f64>,
    tree: MerkleTree,
}

impl Aggregation {
    pub fn inclusion_path(&self, client_id: u32) -> Option<InclusionPath> {
        let i = self.broadcast.accepted.binary_search(&client_id).ok()?;
        self.tree.path(i)
    }
}

fn statement_digest(
    params: &GroupParams,
    round: u64,
    root: &Digest,
    accepted: &[u32],
    commitments: &[CompressedRistretto],
    plaintext: &[i64],
) -> Digest {
    let mut h = Sha256::new();
    h.update(b"skyfed/aggregate-statement/");
    h.update(params.digest());
    h.update(round.to_le_bytes());
    h.update(root);
    h.update((accepted.len() as u32).to_le_bytes());
    for id in accepted {
        h.update(id.to_le_bytes());
    }
    h.update((commitments.len() as u32).to_le_bytes());
    for c in commitments {
        h.update(c.as_bytes());
    }
    for w in plaintext {
        h.update(w.to_le_bytes());
    }
    h.finalize().into()
}

fn batch_weights(statement: &Digest, dim: usize) -> Vec<Scalar> {
    let mut h = Sha256::new();
    h.update(b"skyfed/batch/");
    h.update(statement);
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| Scalar::from(rng.gen::<u128>())).collect()
}

fn challenge(statement: &Digest, announcement: &CompressedRistretto) -> Scalar {
    let mut m = b"skyfed/challenge/".to_vec();
    m.extend_from_slice(statement);
    m.extend_from_slice(announcement.as_bytes());
    Scalar::hash_from_bytes::<Sha512>(&m)
}

fn proof_message(statement: &Digest, a: &CompressedRistretto, e: &Scalar, z: &Scalar) -> Vec<u8> {
    let mut m = b"skyfed/aggregate-proof/".to_vec();
    m.extend_from_slice(statement);
    m.extend_from_slice(a.as_bytes());
    m.extend_from_slice(e.as_bytes());
    m.extend_from_slice(z.as_bytes());
    m
}

fn decompress_all(points: &[CompressedRistretto]) -> Option<Vec<RistrettoPoint>> {
    points.iter().map(|c| c.decompress()).collect()
}

/// Random-linear-combination check that `commitments` open to `values` and `blind`.
fn opens(
    params: &GroupParams,
    commitments: &[RistrettoPoint],
    values: &[i32],
    blind: &[Scalar],
    rng: &mut (impl RngCore + CryptoRng),
) -> bool {
    let weights: Vec<Scalar> = (0..commitments.len())
        .map(|_| Scalar::from(rng.gen::<u128>()))
        .collect();
    let mut wsum = Scalar::ZERO;
    let mut ssum = Scalar::ZERO;
    for ((r, &w), s) in weights.iter().zip(values).zip(blind) {
        wsum += r * scalar_from_i64(w as i64);
        ssum += r * s;
    }
    let scalars = weights.iter().copied().chain([-wsum, -ssum]);
    let points = commitments.iter().copied().chain([params.g(), params.h()]);
    RistrettoPoint::vartime_multiscalar_mul(scalars, points).is_identity()
}

/// Validates and sums client updates, then proves the sum.
///
/// Updates are processed in ascending client id. Each one is checked against
/// the registry, round, dimension, signature, its opening and the norm
/// bound; failures are recorded and excluded.
pub fn aggregate(
    params: &GroupParams,
    round: u64,
    dim: usize,
    submissions: &[(ClientUpdate, ClientOpening)],
    policy: &VerificationPolicy,
    aggregator: &SigningKey,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<Aggregation, AggregateError> {
    let mut order: Vec<usize> = (0..submissions.len()).collect();
    order.sort_by_key(|&i| submissions[i].0.client_id);

    let mut rejected = Vec::new();
    let mut accepted = Vec::new();
    let mut norms = Vec::new();
    let mut leaves = Vec::new();
    let mut c_sum = vec![RistrettoPoint::identity(); dim];
    let mut w_sum = vec![0i64; dim];
    let mut s_sum = vec![Scalar::ZERO; dim];
    let mut seen = BTreeMap::new();

    for i in order {
        let (update, opening) = &submissions[i];
        let id = update.client_id;
        let mut reject = |reason| rejected.push(Rejection { client_id: id, reason });
        let Some(key) = policy.signers.get(&id) else {
            reject(RejectReason::UnknownClient);
            continue;
        };
        if update.round != round {
            reject(RejectReason::WrongRound);
            continue;
        }
        if update.dim() != dim || opening.values.dim() != dim {
            reject(RejectReason::Dimension {
                got: update.dim().max(opening.values.dim()),
                expected: dim,
            });
            continue;
        }
        if verify_sig(&update.signed_message(), &update.signature, key).is_err() {
            reject(RejectReason::BadSignature);
            continue;
        }
        if seen.insert(id, ()).is_some() {
            reject(RejectReason::Duplicate);
            continue;
        }
        let blind = blindings_from_seed(&opening.blinding_seed, round, id, dim);
        let points = match decompress_all(&update.commitments) {
            Some(p) if opens(params, &p, &opening.values.values, &blind, rng) => p,
            _ => {
                reject(RejectReason::OpeningMismatch);
                continue;
            }
        };
        let check = check_policy(&opening.values, policy);
        if !check.pass {
            reject(RejectReason::NormBound {
                norm: check.norm,
                bound: policy.norm_bound,
            });
            continue;
        }
        for j in 0..dim {
            c_sum[j] += points[j];
            w_sum[j] += opening.values.values[j] as i64;
            s_sum[j] += blind[j];
        }
        accepted.push(id);
        norms.push(check.norm);
        leaves.push(update.leaf());
    }
    if accepted.is_empty() {
        return Err(AggregateError::NoAcceptedClients { rejected });
    }

    let tree = MerkleTree::new(leaves);
    let root = tree.root();
    let commitments: Vec<CompressedRistretto> = c_sum.iter().map(|c| c.compress()).collect();
    let statement = statement_digest(params, round, &root, &accepted, &commitments, &w_sum);
    let weights = batch_weights(&statement, dim);
    let secret: Scalar = weights.iter().zip(&s_sum).map(|(r, s)| r * s).sum();
    let nonce = Scalar::random(rng);
    let announcement = params.mul_h(&nonce).compress();
    let e = challenge(&statement, &announcement);
    let response = nonce + e * secret;
    let signature = sign(&proof_message(&statement, &announcement, &e, &response), aggregator);
    let proof = AggregateProof {
        round,
        inclusion_root: root,
        n_accepted: accepted.len() as u32,
        announcement,
        challenge: e,
        response,
        signature,
    };
    Ok(Aggregation {
        broadcast: Broadcast {
            proof,
            accepted,
            commitments,
            plaintext: w_sum,
        },
        rejected,
        norms,
        tree,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("broadcast is for another round")]
    RoundMismatch,
    #[error("malformed broadcast: {0}")]
    Malformed(&'static str),
    #[error("aggregation proof does not verify")]
    BadProof,
    #[error("aggregator signature does not verify")]
    BadAggregatorSignature,
    #[error("own update is not included")]
    NotIncluded,
}

impl VerifyError {
    pub fn code(&self) -> &'static str {
        match self {
            VerifyError::RoundMismatch => "round-mismatch",
            VerifyError::Malformed(_) => "malformed",
            VerifyError::BadProof => "bad-proof",
            VerifyError::BadAggregatorSignature => "bad-aggregator-signature",
            VerifyError::NotIncluded => "not-included",
        }
    }
}

/// A client's check of the broadcast: the proof against the aggregate
/// commitments and plaintext, the aggregator's signature, and inclusion of
/// its own commitments.
pub fn verify_aggregate(
    params: &GroupParams,
    aggregator: &VerifyingKey,
    broadcast: &Broadcast,
    own: &ClientUpdate,
    path: &InclusionPath,
) -> Result<(), VerifyError> {
    let proof = &broadcast.proof;
    if proof.round != own.round {
        return Err(VerifyError::RoundMismatch);
    }
    if proof.n_accepted as usize != broadcast.accepted.len() {
        return Err(VerifyError::Malformed("accepted count"));
    }
    if broadcast.commitments.len() != broadcast.plaintext.len() || broadcast.plaintext.len() != own.dim() {
        return Err(VerifyError::Malformed("dimension"));
    }
    let statement = statement_digest(
        params,
        proof.round,
        &proof.inclusion_root,
        &broadcast.accepted,
        &broadcast.commitments,
        &broadcast.plaintext,
    );
    let points = decompress_all(&broadcast.commitments).ok_or(VerifyError::BadProof)?;
    let a = proof.announcement.decompress().ok_or(VerifyError::BadProof)?;
    if challenge(&statement, &proof.announcement) != proof.challenge {
        return Err(VerifyError::BadProof);
    }
    // h^z == A + e * (sum_j r_j (C_j - w_j g))
    let e = proof.challenge;
    let weights = batch_weights(&statement, points.len());
    let wsum: Scalar = weights
        .iter()
        .zip(&broadcast.plaintext)
        .map(|(r, &w)| r * scalar_from_i64(w))
        .sum();
    let scalars = weights
        .iter()
        .map(|r| -e * r)
        .chain([e * wsum, proof.response, -Scalar::ONE]);
    let pts = points.iter().copied().chain([RISTRETTO_BASEPOINT_POINT, params.h(), a]);
    if !RistrettoPoint::vartime_multiscalar_mul(scalars, pts).is_identity() {
        return Err(VerifyError::BadProof);
    }
    let msg = proof_message(&statement, &proof.announcement, &proof.challenge, &proof.response);
    verify_sig(&msg, &proof.signature, aggregator).map_err(|_| VerifyError::BadAggregatorSignature)?;
    if path.root_from(own.leaf()) != proof.inclusion_root {
        return Err(VerifyError::NotIncluded);
    }
    Ok(())
}
