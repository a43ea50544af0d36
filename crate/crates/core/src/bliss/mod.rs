//! BLISS key generation, signing and verification over `Z_2q[X]/(X^n+1)`.
//!
//! Signing keeps every internal value of the Gaussian draws in a
//! [`SignTranscript`] so that side-channel traces can be synthesized later.

mod codec;
mod hash;
mod params;
mod transcript;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

use crate::ring::{center, negacyclic_mul_exact, poly_inverse, poly_mul, Poly};
use crate::sampler::{GaussWitness, GaussianSampler};

pub use codec::{
    decode_public_key, decode_secret_key, decode_signature, decode_signed_corpus,
    encode_public_key, encode_secret_key, encode_signature, encode_signed_corpus, CodecError,
    SignedMessage,
};
pub use hash::{challenge_poly, hash_challenge, hash_indices};
pub use params::BlissParams;
pub use transcript::write_transcript;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlissError {
    #[error("key generation failed after {0} attempts")]
    GenerationFailed(u32),
    #[error("signing failed after {0} attempts")]
    SigningFailed(u32),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    /// `2 (2g+1) / f mod 2q`.
    pub a1: Poly,
}

impl PublicKey {
    /// Second public component, the constant `q - 2`.
    pub fn a2(&self) -> i64 {
        (self.a1.modulus() / 2) - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    /// `f`, centered mod 2q.
    pub s1: Poly,
    /// `2g + 1`, centered mod 2q.
    pub s2: Poly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub pk: PublicKey,
    pub sk: SecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    /// Centered mod 2q.
    pub z1: Poly,
    /// Compressed second half, centered mod p.
    pub z2dag: Poly,
    /// Binary challenge with `kappa` ones.
    pub c: Vec<i64>,
}

/// Internals of one pass through the signing loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignAttempt {
    pub y1: Vec<i64>,
    pub y2: Vec<i64>,
    pub w1: Vec<GaussWitness>,
    pub w2: Vec<GaussWitness>,
    /// Sign-flip bit.
    pub b: u8,
    pub c: Vec<i64>,
    pub accepted: bool,
}

/// Everything the signer computed, attempt by attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignTranscript {
    /// Attempts in order; the last one is the accepted one.
    pub attempts: Vec<SignAttempt>,
    /// SHA3-256 of the message.
    pub message_digest: [u8; 32],
    pub signature: Signature,
}

impl SignTranscript {
    pub fn accepted(&self) -> &SignAttempt {
        self.attempts
            .last()
            .expect("a transcript has at least one attempt")
    }

    /// Restarts of the outer rejection loop.
    pub fn restarts(&self) -> usize {
        self.attempts.len() - 1
    }

    pub fn b(&self) -> u8 {
        self.accepted().b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Malformed(String),
    NormBound,
    InfBound,
    HashMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// `⌊x⌉_d`: the unique `h` with `x = h 2^d + r`, `r` in `[-2^(d-1), 2^(d-1))`.
#[inline]
pub fn drop_bits(x: i64, d: u32) -> i64 {
    if d == 0 {
        return x;
    }
    (x + (1 << (d - 1))) >> d
}

fn ternary_like<R: RngCore + ?Sized>(n: usize, d1: usize, d2: usize, rng: &mut R) -> Vec<i64> {
    let mut v = vec![0i64; n];
    let positions = sample_indices(rng, n, d1 + d2);
    for (k, i) in positions.into_iter().enumerate() {
        let mag = if k < d1 { 1 } else { 2 };
        v[i] = if rng.random::<bool>() { mag } else { -mag };
    }
    v
}

/// `N_kappa(S)`: the largest value `||S c||^2` can take over challenges of
/// weight `kappa`, bounded through the Gram matrix of the rotations.
pub fn n_kappa(s1: &[i64], s2: &[i64], kappa: usize) -> i64 {
    let n = s1.len();
    // Rotations are orthogonal maps, so the Gram entry (i, j) depends only on
    // |i - j|: it is the negacyclic autocorrelation at that lag.
    let autocorr = |s: &[i64], lag: usize| -> i64 {
        (0..n)
            .map(|j| {
                let k = j + lag;
                if k < n {
                    s[j] * s[k]
                } else {
                    -s[j] * s[k - n]
                }
            })
            .sum()
    };
    let ac: Vec<i64> = (0..n).map(|l| autocorr(s1, l) + autocorr(s2, l)).collect();
    let mut row_sums: Vec<i64> = (0..n)
        .map(|i| {
            let mut row: Vec<i64> = (0..n).map(|j| ac[i.abs_diff(j)]).collect();
            row.sort_unstable_by(|a, b| b.cmp(a));
            row[..kappa].iter().sum()
        })
        .collect();
    row_sums.sort_unstable_by(|a, b| b.cmp(a));
    row_sums[..kappa].iter().sum()
}

pub fn keygen<R: RngCore + ?Sized>(
    params: &BlissParams,
    rng: &mut R,
) -> Result<KeyPair, BlissError> {
    params.validate().map_err(BlissError::InvalidParams)?;
    let n = params.n();
    let q = params.ring.q();
    let two_q = params.ring.two_q();
    for _ in 0..params.max_keygen_restarts {
        let f = ternary_like(n, params.d1, params.d2, rng);
        let g = ternary_like(n, params.d1, params.d2, rng);
        let mut s2 = g.iter().map(|&v| 2 * v).collect::<Vec<_>>();
        s2[0] += 1;
        if n_kappa(&f, &s2, params.kappa) > params.nks_max {
            continue;
        }
        let Ok(f_inv) = poly_inverse(&Poly::from_coeffs(f.clone(), q), &params.ring) else {
            continue;
        };
        let aq = poly_mul(&Poly::from_coeffs(s2.clone(), q), &f_inv, &params.ring)
            .expect("operands share the ring");
        let a1 = Poly::from_coeffs(aq.coeffs().iter().map(|&v| 2 * v).collect(), two_q);
        return Ok(KeyPair {
            pk: PublicKey { a1 },
            sk: SecretKey {
                s1: Poly::from_coeffs(f, two_q),
                s2: Poly::from_coeffs(s2, two_q),
            },
        });
    }
    Err(BlissError::GenerationFailed(params.max_keygen_restarts))
}

/// Recomputes `s2 = zeta (q - a1 s1) mod 2q` from the public key and `s1`.
pub fn recover_s2(pk: &PublicKey, s1: &[i64], params: &BlissParams) -> Poly {
    let two_q = params.ring.two_q();
    let q = params.ring.q();
    let a1s1 = poly_mul(&pk.a1, &Poly::from_coeffs(s1.to_vec(), two_q), &params.ring)
        .expect("operands share the ring");
    let zeta = params.ring.zeta();
    let mut coeffs: Vec<i64> = a1s1.coeffs().iter().map(|&v| -v).collect();
    coeffs[0] += q;
    Poly::from_coeffs(coeffs, two_q).scale(zeta)
}

/// Checks the structural invariants of a secret key and the relation
/// `a1 s1 + (q - 2) s2 = q mod 2q`.
pub fn check_key_pair(keys: &KeyPair, params: &BlissParams) -> Result<(), String> {
    let count = |s: &[i64], m: i64| s.iter().filter(|v| v.abs() == m).count();
    let s1 = keys.sk.s1.coeffs();
    if count(s1, 1) != params.d1 || count(s1, 2) != params.d2 {
        return Err("s1 support counts differ from (d1, d2)".into());
    }
    if s1.iter().any(|v| v.abs() > 2) {
        return Err("s1 has a coefficient outside [-2, 2]".into());
    }
    let s2 = keys.sk.s2.coeffs();
    let g: Vec<i64> = s2
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { v - 1 } else { v })
        .collect();
    if g.iter().any(|v| v % 2 != 0) {
        return Err("s2 is not of the form 2g + 1".into());
    }
    let g: Vec<i64> = g.iter().map(|v| v / 2).collect();
    if count(&g, 1) != params.d1 || count(&g, 2) != params.d2 {
        return Err("g support counts differ from (d1, d2)".into());
    }
    let two_q = params.ring.two_q();
    let q = params.ring.q();
    let lhs = poly_mul(&keys.pk.a1, &keys.sk.s1, &params.ring)
        .and_then(|a| a.add(&keys.sk.s2.scale(keys.pk.a2())))
        .map_err(|e| e.to_string())?;
    let mut expected = vec![0; params.n()];
    expected[0] = center(q, two_q);
    if lhs.coeffs() != expected.as_slice() {
        return Err("a1 s1 + a2 s2 is not q mod 2q".into());
    }
    Ok(())
}

/// `⌊u⌉_d mod p`, centered.
pub fn compress_u(u: &[i64], params: &BlissParams) -> Vec<i64> {
    u.iter()
        .map(|&v| center(drop_bits(v, params.d), params.p))
        .collect()
}

fn message_digest(message: &[u8]) -> [u8; 32] {
    Sha3_256::digest(message).into()
}

/// Signing options.
#[derive(Debug, Clone, Default)]
pub struct SignOptions {
    /// Draw `y_u` as this many additive shares (`None` or `< 2`: unmasked).
    pub masking_shares: Option<usize>,
}

/// Reusable signer holding the sampler table.
#[derive(Debug, Clone)]
pub struct Signer {
    params: BlissParams,
    sampler: GaussianSampler,
    options: SignOptions,
}

impl Signer {
    pub fn new(params: BlissParams, options: SignOptions) -> Result<Self, BlissError> {
        params.validate().map_err(BlissError::InvalidParams)?;
        let sampler = GaussianSampler::new(params.sampler.clone());
        Ok(Self {
            params,
            sampler,
            options,
        })
    }

    pub fn params(&self) -> &BlissParams {
        &self.params
    }

    fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> (i64, GaussWitness) {
        match self.options.masking_shares {
            Some(s) if s >= 2 => self.sampler.sample_masked(s, rng),
            _ => self.sampler.sample(rng),
        }
    }

    pub fn sign<R: RngCore + ?Sized>(
        &self,
        message: &[u8],
        keys: &KeyPair,
        rng: &mut R,
    ) -> Result<(Signature, SignTranscript), BlissError> {
        let p = &self.params;
        let n = p.n();
        let two_q = p.ring.two_q();
        let sigma2 = p.sigma() * p.sigma();
        let s1 = keys.sk.s1.coeffs();
        let s2 = keys.sk.s2.coeffs();
        let mut attempts = Vec::new();
        for _ in 0..p.max_sign_restarts {
            let (y1, w1): (Vec<i64>, Vec<GaussWitness>) = (0..n).map(|_| self.draw(rng)).unzip();
            let (y2, w2): (Vec<i64>, Vec<GaussWitness>) = (0..n).map(|_| self.draw(rng)).unzip();
            let u = self.commitment(&keys.pk, &y1, &y2);
            let c = hash_challenge(&compress_u(&u, p), message, n, p.kappa);
            let b = (rng.next_u32() & 1) as u8;
            let sign = 1 - 2 * b as i64;
            let v1 = negacyclic_mul_exact(s1, &c);
            let v2 = negacyclic_mul_exact(s2, &c);
            let z1: Vec<i64> = y1
                .iter()
                .zip(v1.iter())
                .map(|(y, v)| y + sign * v)
                .collect();
            let z2: Vec<i64> = y2
                .iter()
                .zip(v2.iter())
                .map(|(y, v)| y + sign * v)
                .collect();
            let sc_norm2 = (v1.dot(&v1) + v2.dot(&v2)) as f64;
            let z_sc = (v1.dot(&z1) + v2.dot(&z2)) as f64;
            let accept_prob =
                1.0 / (p.m_rej * (-sc_norm2 / (2.0 * sigma2)).exp() * (z_sc / sigma2).cosh());
            let accepted = rng.random::<f64>() < accept_prob;
            attempts.push(SignAttempt {
                y1,
                y2,
                w1,
                w2,
                b,
                c: c.clone(),
                accepted,
            });
            if !accepted {
                continue;
            }
            let z2dag: Vec<i64> = u
                .iter()
                .zip(&z2)
                .map(|(&ui, &zi)| {
                    center(
                        drop_bits(ui, p.d) - drop_bits(center(ui - zi, two_q), p.d),
                        p.p,
                    )
                })
                .collect();
            let signature = Signature {
                z1: Poly::from_coeffs(z1, two_q),
                z2dag: Poly::from_coeffs(z2dag, p.p),
                c,
            };
            let transcript = SignTranscript {
                attempts,
                message_digest: message_digest(message),
                signature: signature.clone(),
            };
            return Ok((signature, transcript));
        }
        Err(BlissError::SigningFailed(p.max_sign_restarts))
    }

    /// `u = zeta a1 y1 + y2 mod 2q`, centered.
    pub fn commitment(&self, pk: &PublicKey, y1: &[i64], y2: &[i64]) -> Vec<i64> {
        commitment(&self.params, pk, y1, y2)
    }
}

pub fn commitment(params: &BlissParams, pk: &PublicKey, y1: &[i64], y2: &[i64]) -> Vec<i64> {
    let two_q = params.ring.two_q();
    let ay = poly_mul(&pk.a1, &Poly::from_coeffs(y1.to_vec(), two_q), &params.ring)
        .expect("operands share the ring");
    let zeta = params.ring.zeta();
    ay.coeffs()
        .iter()
        .zip(y2)
        .map(|(&a, &y)| center(zeta * a + y, two_q))
        .collect()
}

/// One-shot signing with default options.
pub fn sign<R: RngCore + ?Sized>(
    message: &[u8],
    keys: &KeyPair,
    params: &BlissParams,
    rng: &mut R,
) -> Result<(Signature, SignTranscript), BlissError> {
    Signer::new(params.clone(), SignOptions::default())?.sign(message, keys, rng)
}

pub fn verify(message: &[u8], pk: &PublicKey, sig: &Signature, params: &BlissParams) -> Verdict {
    let n = params.n();
    let two_q = params.ring.two_q();
    let q = params.ring.q();
    if sig.z1.len() != n || sig.z2dag.len() != n || sig.c.len() != n || pk.a1.len() != n {
        return Verdict::Reject(RejectReason::Malformed("length differs from n".into()));
    }
    if pk.a1.modulus() != two_q {
        return Verdict::Reject(RejectReason::Malformed("public key modulus".into()));
    }
    if sig.c.iter().any(|&v| v != 0 && v != 1)
        || sig.c.iter().filter(|&&v| v == 1).count() != params.kappa
    {
        return Verdict::Reject(RejectReason::Malformed(
            "challenge is not binary of weight kappa".into(),
        ));
    }
    let z1: Vec<i64> = sig.z1.coeffs().iter().map(|&v| center(v, two_q)).collect();
    let z2s: Vec<i64> = sig
        .z2dag
        .coeffs()
        .iter()
        .map(|&v| center(v, params.p) << params.d)
        .collect();
    let norm2: f64 = z1.iter().chain(&z2s).map(|&v| (v * v) as f64).sum();
    if norm2 > params.b2 * params.b2 {
        return Verdict::Reject(RejectReason::NormBound);
    }
    if z1.iter().chain(&z2s).any(|v| v.abs() > params.binf) {
        return Verdict::Reject(RejectReason::InfBound);
    }
    let az = poly_mul(&pk.a1, &Poly::from_coeffs(z1, two_q), &params.ring)
        .expect("operands share the ring");
    let zeta = params.ring.zeta();
    let w: Vec<i64> = az
        .coeffs()
        .iter()
        .zip(&sig.c)
        .zip(sig.z2dag.coeffs())
        .map(|((&a, &c), &z)| {
            let v = center(zeta * a + zeta * q * c, two_q);
            center(drop_bits(v, params.d) + z, params.p)
        })
        .collect();
    if hash_challenge(&w, message, n, params.kappa) != sig.c {
        return Verdict::Reject(RejectReason::HashMismatch);
    }
    Verdict::Accept
}
