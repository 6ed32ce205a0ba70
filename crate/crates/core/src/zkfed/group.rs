use curve25519_dalek::constants::{RISTRETTO_BASEPOINT_POINT, RISTRETTO_BASEPOINT_TABLE};
use curve25519_dalek::ristretto::{RistrettoBasepointTable, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use ed25519_dalek::SigningKey;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256, Sha512};

/// Commitment generators. `g` is the Ristretto basepoint and `h` is hashed
/// from the tag, so nobody knows `log_g h`.
#[derive(Clone)]
pub struct GroupParams {
    tag: Vec<u8>,
    h: RistrettoPoint,
    h_table: RistrettoBasepointTable,
}

impl std::fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroupParams")
            .field("tag", &self.tag)
            .field("h", &self.h.compress())
            .finish()
    }
}

impl PartialEq for GroupParams {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag && self.h == other.h
    }
}

impl GroupParams {
    pub fn from_tag(tag: &[u8]) -> Self {
        let mut input = b"skyfed/pedersen-h/".to_vec();
        input.extend_from_slice(tag);
        let h = RistrettoPoint::hash_from_bytes::<Sha512>(&input);
        Self {
            tag: tag.to_vec(),
            h,
            h_table: RistrettoBasepointTable::create(&h),
        }
    }

    pub fn tag(&self) -> &[u8] {
        &self.tag
    }

    pub fn g(&self) -> RistrettoPoint {
        RISTRETTO_BASEPOINT_POINT
    }

    pub fn h(&self) -> RistrettoPoint {
        self.h
    }

    pub(crate) fn mul_h(&self, s: &Scalar) -> RistrettoPoint {
        &self.h_table * s
    }

    /// Binds transcripts to these generators.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"skyfed/params/");
        hasher.update((self.tag.len() as u32).to_le_bytes());
        hasher.update(&self.tag);
        hasher.update(self.g().compress().as_bytes());
        hasher.update(self.h.compress().as_bytes());
        hasher.finalize().into()
    }
}

/// `g^w h^s`.
pub fn commit(w: &Scalar, s: &Scalar, params: &GroupParams) -> RistrettoPoint {
    let gw = if *w == Scalar::ZERO {
        RistrettoPoint::identity()
    } else {
        RISTRETTO_BASEPOINT_TABLE * w
    };
    gw + params.mul_h(s)
}

/// Embeds a signed integer into the scalar field.
pub fn scalar_from_i64(v: i64) -> Scalar {
    if v >= 0 {
        Scalar::from(v as u64)
    } else {
        -Scalar::from(v.unsigned_abs())
    }
}

pub struct Setup {
    pub params: GroupParams,
    pub aggregator: SigningKey,
    /// Client `i` signs with `clients[i]`.
    pub clients: Vec<SigningKey>,
}

/// Generators plus signing keys for the aggregator and `n_clients` clients.
/// A seed makes everything reproducible; without one, keys and the tag come
/// from the operating system.
pub fn setup(seed: Option<[u8; 32]>, n_clients: usize) -> Setup {
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::from_seed(s),
        None => ChaCha20Rng::from_rng(OsRng).expect("system entropy"),
    };
    let mut tag = b"skyfed/v1/".to_vec();
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);
    tag.extend_from_slice(&nonce);
    let params = GroupParams::from_tag(&tag);
    let aggregator = SigningKey::generate(&mut rng);
    let clients = (0..n_clients).map(|_| SigningKey::generate(&mut rng)).collect();
    Setup {
        params,
        aggregator,
        clients,
    }
}
