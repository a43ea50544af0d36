//! Binary encodings of keys and signatures.
//!
//! Every blob starts with a 4-byte magic, a `u16` format version, the ring
//! prime `q` as `u32` and the dropped-bit count `d` as `u8`. Polynomials follow
//! as a `u32` coefficient count and that many `i16` centered coefficients.
//! All integers are little-endian.
//!
//! | magic  | body                                              |
//! |--------|---------------------------------------------------|
//! | `BLPK` | `a1`                                              |
//! | `BLSK` | `a1`, `s1`, `s2`                                  |
//! | `BLSG` | `z1`, `z2dag`, `c`                                |
//! | `BLSC` | `u32` count, then per entry a `u32`-prefixed message and `z1`, `z2dag`, `c` |

use thiserror::Error;

use super::{KeyPair, PublicKey, SecretKey, Signature};
use crate::ring::{center, Poly};

pub const FORMAT_VERSION: u16 = 1;
const MAGIC_PK: &[u8; 4] = b"BLPK";
const MAGIC_SK: &[u8; 4] = b"BLSK";
const MAGIC_SIG: &[u8; 4] = b"BLSG";
const MAGIC_CORPUS: &[u8; 4] = b"BLSC";
const MAX_N: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("format version {0} is not supported")]
    VersionMismatch(u16),
    #[error("input ends early")]
    Truncated,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    Invalid(String),
}

/// One signed message of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMessage {
    pub message: Vec<u8>,
    pub signature: Signature,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4], q: i64, d: u32) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(q as u32).to_le_bytes());
        buf.push(d as u8);
        Self { buf }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn poly(&mut self, coeffs: &[i64]) {
        self.u32(coeffs.len() as u32);
        for &c in coeffs {
            self.buf.extend_from_slice(&(c as i16).to_le_bytes());
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    q: i64,
    d: u32,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 4]) -> Result<Self, CodecError> {
        let mut r = Self { data, q: 0, d: 0 };
        if r.take(4)? != magic {
            return Err(CodecError::BadMagic { expected: *magic });
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CodecError::VersionMismatch(version));
        }
        let q = r.u32()? as i64;
        // 2q must fit the i16 coefficient encoding.
        if q < 3 || q % 2 == 0 || 2 * q > 1 << 15 {
            return Err(CodecError::Invalid(format!("modulus q = {q}")));
        }
        let d = r.take(1)?[0] as u32;
        if d == 0 || d >= 16 || (2 * q) >> d < 2 {
            return Err(CodecError::Invalid(format!("dropped bits d = {d}")));
        }
        r.q = q;
        r.d = d;
        Ok(r)
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() < k {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.data.split_at(k);
        self.data = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn poly(&mut self, modulus: i64) -> Result<Vec<i64>, CodecError> {
        let len = self.u32()? as usize;
        if len == 0 || len > MAX_N || !len.is_power_of_two() {
            return Err(CodecError::Invalid(format!("polynomial length {len}")));
        }
        let raw = self.take(2 * len)?;
        raw.chunks_exact(2)
            .map(|b| {
                let v = i16::from_le_bytes([b[0], b[1]]) as i64;
                if center(v, modulus) != v {
                    Err(CodecError::Invalid(format!(
                        "coefficient {v} not centered mod {modulus}"
                    )))
                } else {
                    Ok(v)
                }
            })
            .collect()
    }

    fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn finish(self) -> Result<(), CodecError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes(self.data.len()))
        }
    }

    fn signature(&mut self) -> Result<Signature, CodecError> {
        let two_q = 2 * self.q;
        let p = two_q >> self.d;
        let z1 = self.poly(two_q)?;
        let z2dag = self.poly(p)?;
        let c = self.poly(two_q)?;
        if z2dag.len() != z1.len() || c.len() != z1.len() {
            return Err(CodecError::Invalid(
                "signature parts differ in length".into(),
            ));
        }
        if c.iter().any(|&v| v != 0 && v != 1) {
            return Err(CodecError::Invalid("challenge is not binary".into()));
        }
        Ok(Signature {
            z1: Poly::from_coeffs(z1, two_q),
            z2dag: Poly::from_coeffs(z2dag, p),
            c,
        })
    }
}

fn q_of(p: &Poly) -> i64 {
    p.modulus() / 2
}

fn write_signature(w: &mut Writer, sig: &Signature) {
    w.poly(sig.z1.coeffs());
    w.poly(sig.z2dag.coeffs());
    w.poly(&sig.c);
}

fn d_of(sig: &Signature) -> u32 {
    (sig.z1.modulus() / sig.z2dag.modulus()).trailing_zeros()
}

pub fn encode_public_key(pk: &PublicKey, d: u32) -> Vec<u8> {
    let mut w = Writer::new(MAGIC_PK, q_of(&pk.a1), d);
    w.poly(pk.a1.coeffs());
    w.buf
}

pub fn decode_public_key(data: &[u8]) -> Result<PublicKey, CodecError> {
    let mut r = Reader::new(data, MAGIC_PK)?;
    let a1 = r.poly(2 * r.q)?;
    let two_q = 2 * r.q;
    r.finish()?;
    Ok(PublicKey {
        a1: Poly::from_coeffs(a1, two_q),
    })
}

pub fn encode_secret_key(keys: &KeyPair, d: u32) -> Vec<u8> {
    let mut w = Writer::new(MAGIC_SK, q_of(&keys.pk.a1), d);
    w.poly(keys.pk.a1.coeffs());
    w.poly(keys.sk.s1.coeffs());
    w.poly(keys.sk.s2.coeffs());
    w.buf
}

/// Decodes a key pair; the structural checks of the secret live in
/// `check_key_pair`.
pub fn decode_secret_key(data: &[u8]) -> Result<KeyPair, CodecError> {
    let mut r = Reader::new(data, MAGIC_SK)?;
    let two_q = 2 * r.q;
    let a1 = r.poly(two_q)?;
    let s1 = r.poly(two_q)?;
    let s2 = r.poly(two_q)?;
    r.finish()?;
    if s1.len() != a1.len() || s2.len() != a1.len() {
        return Err(CodecError::Invalid("key parts differ in length".into()));
    }
    Ok(KeyPair {
        pk: PublicKey {
            a1: Poly::from_coeffs(a1, two_q),
        },
        sk: SecretKey {
            s1: Poly::from_coeffs(s1, two_q),
            s2: Poly::from_coeffs(s2, two_q),
        },
    })
}

pub fn encode_signature(sig: &Signature) -> Vec<u8> {
    let mut w = Writer::new(MAGIC_SIG, q_of(&sig.z1), d_of(sig));
    write_signature(&mut w, sig);
    w.buf
}

pub fn decode_signature(data: &[u8]) -> Result<Signature, CodecError> {
    let mut r = Reader::new(data, MAGIC_SIG)?;
    let sig = r.signature()?;
    r.finish()?;
    Ok(sig)
}

/// Encodes a list of signed messages; all signatures must share `q` and `d`.
pub fn encode_signed_corpus(entries: &[SignedMessage], q: i64, d: u32) -> Vec<u8> {
    let mut w = Writer::new(MAGIC_CORPUS, q, d);
    w.u32(entries.len() as u32);
    for e in entries {
        w.bytes(&e.message);
        write_signature(&mut w, &e.signature);
    }
    w.buf
}

pub fn decode_signed_corpus(data: &[u8]) -> Result<Vec<SignedMessage>, CodecError> {
    let mut r = Reader::new(data, MAGIC_CORPUS)?;
    let count = r.u32()? as usize;
    // Each entry needs at least 16 bytes; reject counts the input cannot hold.
    if count > r.data.len() / 16 {
        return Err(CodecError::Truncated);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let message = r.bytes()?;
        let signature = r.signature()?;
        out.push(SignedMessage { message, signature });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bliss::{keygen, sign, BlissParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trips() {
        let params = BlissParams::toy64();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let keys = keygen(&params, &mut rng).unwrap();
        let (sig, _) = sign(b"abc", &keys, &params, &mut rng).unwrap();
        assert_eq!(
            decode_public_key(&encode_public_key(&keys.pk, params.d)).unwrap(),
            keys.pk
        );
        assert_eq!(
            decode_secret_key(&encode_secret_key(&keys, params.d)).unwrap(),
            keys
        );
        assert_eq!(decode_signature(&encode_signature(&sig)).unwrap(), sig);
        let corpus = vec![
            SignedMessage {
                message: b"abc".to_vec(),
                signature: sig.clone(),
            },
            SignedMessage {
                message: Vec::new(),
                signature: sig,
            },
        ];
        let bytes = encode_signed_corpus(&corpus, params.ring.q(), params.d);
        assert_eq!(decode_signed_corpus(&bytes).unwrap(), corpus);
    }

    #[test]
    fn rejects_damaged_input() {
        let params = BlissParams::toy64();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let keys = keygen(&params, &mut rng).unwrap();
        let bytes = encode_public_key(&keys.pk, params.d);
        assert_eq!(
            decode_public_key(&bytes[..bytes.len() - 1]),
            Err(CodecError::Truncated)
        );
        assert!(matches!(
            decode_signature(&bytes),
            Err(CodecError::BadMagic { .. })
        ));
        let mut v = bytes.clone();
        v[4] = 9;
        assert_eq!(decode_public_key(&v), Err(CodecError::VersionMismatch(9)));
        let mut t = bytes.clone();
        t.push(0);
        assert_eq!(decode_public_key(&t), Err(CodecError::TrailingBytes(1)));
        for cut in 0..bytes.len() {
            assert!(decode_public_key(&bytes[..cut]).is_err());
        }
    }
}
