//! Binary encodings. Integers are little-endian, group elements are 32-byte
//! compressed Ristretto points, scalars are 32-byte canonical encodings and
//! signatures are 64 bytes. Variable-length sections carry a `u32` count.

use curve25519_dalek::ristretto::CompressedRistretto;
use curve25519_dalek::scalar::Scalar;
use ed25519_dalek::Signature;
use thiserror::Error;

use super::merkle::{InclusionPath, Side};
use super::proof::{AggregateProof, Broadcast, ClientUpdate};

pub const PROOF_MAGIC: &[u8; 4] = b"SKAP";
pub const BROADCAST_MAGIC: &[u8; 4] = b"SKAB";
pub const UPDATE_MAGIC: &[u8; 4] = b"SKCU";
pub const PATH_MAGIC: &[u8; 4] = b"SKIP";
pub const VERSION: u8 = 1;

/// Encoded size of an [`AggregateProof`].
pub const PROOF_LEN: usize = 4 + 1 + 8 + 32 + 4 + 32 + 32 + 32 + 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("non-canonical scalar")]
    NonCanonicalScalar,
    #[error("bad side marker {0}")]
    BadSide(u8),
    #[error("length mismatch")]
    Length,
}

struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut v = magic.to_vec();
        v.push(VERSION);
        Writer(v)
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section longer than u32::MAX"));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self, WireError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != magic {
            return Err(WireError::BadMagic);
        }
        match r.take(1)?[0] {
            VERSION => Ok(r),
            v => Err(WireError::BadVersion(v)),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    /// A count whose items take `item` bytes each; refuses counts the input cannot hold.
    fn count(&mut self, item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item) > self.buf.len() - self.pos {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn point(&mut self) -> Result<CompressedRistretto, WireError> {
        Ok(CompressedRistretto(self.array()?))
    }
    fn scalar(&mut self) -> Result<Scalar, WireError> {
        Option::from(Scalar::from_canonical_bytes(self.array()?)).ok_or(WireError::NonCanonicalScalar)
    }
    fn signature(&mut self) -> Result<Signature, WireError> {
        Ok(Signature::from_bytes(&self.array()?))
    }
    fn finish(self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

pub fn encode_proof(p: &AggregateProof) -> Vec<u8> {
    let mut w = Writer::header(PROOF_MAGIC);
    w.u64(p.round);
    w.bytes(&p.inclusion_root);
    w.u32(p.n_accepted);
    w.bytes(p.announcement.as_bytes());
    w.bytes(p.challenge.as_bytes());
    w.bytes(p.response.as_bytes());
    w.bytes(&p.signature.to_bytes());
    w.0
}

fn read_proof(r: &mut Reader) -> Result<AggregateProof, WireError> {
    Ok(AggregateProof {
        round: r.u64()?,
        inclusion_root: r.array()?,
        n_accepted: r.u32()?,
        announcement: r.point()?,
        challenge: r.scalar()?,
        response: r.scalar()?,
        signature: r.signature()?,
    })
}

pub fn decode_proof(buf: &[u8]) -> Result<AggregateProof, WireError> {
    let mut r = Reader::open(buf, PROOF_MAGIC)?;
    let p = read_proof(&mut r)?;
    r.finish()?;
    Ok(p)
}

/// Header, then the proof (length-prefixed), accepted ids, aggregate
/// commitments and the `i64` plaintext sum.
pub fn encode_broadcast(b: &Broadcast) -> Vec<u8> {
    let mut w = Writer::header(BROADCAST_MAGIC);
    let proof = encode_proof(&b.proof);
    w.len(proof.len());
    w.bytes(&proof);
    w.len(b.accepted.len());
    for id in &b.accepted {
        w.u32(*id);
    }
    w.len(b.commitments.len());
    for c in &b.commitments {
        w.bytes(c.as_bytes());
    }
    w.len(b.plaintext.len());
    for v in &b.plaintext {
        w.bytes(&v.to_le_bytes());
    }
    w.0
}

pub fn decode_broadcast(buf: &[u8]) -> Result<Broadcast, WireError> {
    let mut r = Reader::open(buf, BROADCAST_MAGIC)?;
    let n = r.count(1)?;
    let proof = decode_proof(r.take(n)?)?;
    let n = r.count(4)?;
    let accepted = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
    let n = r.count(32)?;
    let commitments = (0..n).map(|_| r.point()).collect::<Result<_, _>>()?;
    let n = r.count(8)?;
    let plaintext = (0..n)
        .map(|_| Ok(i64::from_le_bytes(r.array()?)))
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(Broadcast {
        proof,
        accepted,
        commitments,
        plaintext,
    })
}

pub fn encode_update(u: &ClientUpdate) -> Vec<u8> {
    let mut w = Writer::header(UPDATE_MAGIC);
    w.u64(u.round);
    w.u32(u.client_id);
    w.len(u.commitments.len());
    for c in &u.commitments {
        w.bytes(c.as_bytes());
    }
    w.bytes(&u.signature.to_bytes());
    w.0
}

pub fn decode_update(buf: &[u8]) -> Result<ClientUpdate, WireError> {
    let mut r = Reader::open(buf, UPDATE_MAGIC)?;
    let round = r.u64()?;
    let client_id = r.u32()?;
    let n = r.count(32)?;
    let commitments = (0..n).map(|_| r.point()).collect::<Result<_, _>>()?;
    let signature = r.signature()?;
    r.finish()?;
    Ok(ClientUpdate {
        round,
        client_id,
        commitments,
        signature,
    })
}

pub fn encode_path(p: &InclusionPath) -> Vec<u8> {
    let mut w = Writer::header(PATH_MAGIC);
    w.len(p.steps.len());
    for (side, d) in &p.steps {
        w.bytes(&[match side {
            Side::Left => 0,
            Side::Right => 1,
        }]);
        w.bytes(d);
    }
    w.0
}

pub fn decode_path(buf: &[u8]) -> Result<InclusionPath, WireError> {
    let mut r = Reader::open(buf, PATH_MAGIC)?;
    let n = r.count(33)?;
    let steps = (0..n)
        .map(|_| {
            let side = match r.take(1)?[0] {
                0 => Side::Left,
                1 => Side::Right,
                b => return Err(WireError::BadSide(b)),
            };
            Ok((side, r.array()?))
        })
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(InclusionPath { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zkfed::{aggregate, create_update, setup, QuantizedVector, VerificationPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample() -> (ClientUpdate, Broadcast, InclusionPath) {
        let s = setup(Some([5; 32]), 3);
        let signers = s
            .clients
            .iter()
            .enumerate()
            .map(|(i, k)| (i as u32, k.verifying_key()))
            .collect();
        let policy = VerificationPolicy::new(f64::INFINITY, signers);
        let subs: Vec<_> = (0..3)
            .map(|i| {
                let q = QuantizedVector {
                    values: vec![i, -i, 7],
                    clamped: 0,
                };
                create_update(&s.params, &s.clients[i as usize], 3, i as u32, &q, [i as u8; 32])
            })
            .collect();
        let agg = aggregate(
            &s.params,
            3,
            3,
            &subs,
            &policy,
            &s.aggregator,
            &mut ChaCha20Rng::seed_from_u64(1),
        )
        .unwrap();
        let path = agg.inclusion_path(1).unwrap();
        (subs[1].0.clone(), agg.broadcast, path)
    }

    #[test]
    fn roundtrips() {
        let (u, b, p) = sample();
        assert_eq!(decode_update(&encode_update(&u)).unwrap(), u);
        assert_eq!(decode_broadcast(&encode_broadcast(&b)).unwrap(), b);
        assert_eq!(decode_path(&encode_path(&p)).unwrap(), p);
        assert_eq!(encode_proof(&b.proof).len(), PROOF_LEN);
        assert_eq!(encode_update(&u).len(), 5 + 8 + 4 + 4 + 3 * 32 + 64);
    }

    #[test]
    fn truncation_and_trailing_rejected() {
        let (_, b, _) = sample();
        let bytes = encode_broadcast(&b);
        for cut in 0..bytes.len() {
            assert!(decode_broadcast(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_broadcast(&long), Err(WireError::Trailing(1)));
        let mut bad = bytes;
        bad[4] = 9;
        assert_eq!(decode_broadcast(&bad), Err(WireError::BadVersion(9)));
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let mut w = Writer::header(UPDATE_MAGIC);
        w.u64(0);
        w.u32(0);
        w.u32(u32::MAX);
        assert_eq!(decode_update(&w.0), Err(WireError::Truncated));
    }
}
