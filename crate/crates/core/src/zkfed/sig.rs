use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigError {
    #[error("signature does not verify")]
    Invalid,
    #[error("malformed public key")]
    MalformedKey,
}

pub fn sign(message: &[u8], key: &SigningKey) -> Signature {
    key.sign(message)
}

/// Strict Ed25519 verification (rejects small-order keys and
/// non-canonical encodings).
pub fn verify_sig(message: &[u8], signature: &Signature, key: &VerifyingKey) -> Result<(), SigError> {
    if key.is_weak() {
        return Err(SigError::MalformedKey);
    }
    key.verify_strict(message, signature).map_err(|_| SigError::Invalid)
}
