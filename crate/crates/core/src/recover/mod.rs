//! Key recovery from leaked signing internals: least squares over exact
//! equations, the kernel of challenge rotations, and likelihood ascent on
//! the sign-flip bits.

mod attack1;
mod kernel;
mod mle;

use thiserror::Error;

use crate::bliss::{BlissParams, KeyPair, PublicKey, SecretKey, SignTranscript, Signature};
use crate::ring::{center, IntVector, Poly};

pub use attack1::{
    attack1, collect_equations_attack1, solve_least_squares, Attack1Options, Attack1Report,
};
pub use kernel::{
    collect_equations_attack2, kernel_attack, kernel_mod_prime, random_prime_62, KernelOptions,
    KernelReport,
};
pub use mle::{mle_attack, phi, phi_prime, MleOptions, MleProblem, MleReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoverError {
    #[error("recovery failed: {0}")]
    RecoveryFailed(String),
    #[error("likelihood ascent did not validate a key after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<KeyCandidate>,
    },
    #[error("brute force budget of {0} candidates exhausted")]
    BudgetExhausted(u64),
}

/// Leak predictions for one Gaussian draw of `y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawPrediction {
    pub yu_zero: bool,
    pub x: u32,
    pub a: u8,
    /// Product of the classifier probabilities behind this prediction.
    pub confidence: f64,
}

/// Predictions for one signature, index-aligned with its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SignaturePrediction {
    pub b: u8,
    pub draws: Vec<DrawPrediction>,
}

impl SignaturePrediction {
    /// Noise-free labels read from the signer's transcript.
    pub fn oracle(t: &SignTranscript) -> Self {
        let acc = t.accepted();
        Self {
            b: acc.b,
            draws: acc
                .w1
                .iter()
                .map(|w| DrawPrediction {
                    yu_zero: w.yu_zero_leak(),
                    x: w.x,
                    a: w.a,
                    confidence: 1.0,
                })
                .collect(),
        }
    }
}

/// Linear equations `<row, s1> = rhs` with their origin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquationSystem {
    pub n: usize,
    pub rows: Vec<IntVector>,
    /// Right-hand sides; all zero for kernel systems.
    pub rhs: Vec<i64>,
    /// `(signature, coefficient)` per row.
    pub provenance: Vec<(usize, usize)>,
    pub confidence: Vec<f64>,
}

impl EquationSystem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: IntVector, rhs: i64, origin: (usize, usize), confidence: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.rows.push(row);
        self.rhs.push(rhs);
        self.provenance.push(origin);
        self.confidence.push(confidence);
    }

    pub fn retain(&mut self, keep: impl Fn(usize) -> bool) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.rows = idx.iter().map(|&i| self.rows[i].clone()).collect();
        self.rhs = idx.iter().map(|&i| self.rhs[i]).collect();
        self.provenance = idx.iter().map(|&i| self.provenance[i]).collect();
        self.confidence = idx.iter().map(|&i| self.confidence[i]).collect();
    }

    /// Rows the given key violates.
    pub fn violations(&self, s1: &[i64]) -> usize {
        self.rows
            .iter()
            .zip(&self.rhs)
            .filter(|(r, &b)| r.dot(s1) != b)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Validated,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyCandidate {
    pub s1: Vec<i64>,
    pub status: Validation,
    /// Per-coordinate confidence in `[0, 1]`; empty when not tracked.
    pub confidence: Vec<f64>,
}

impl KeyCandidate {
    pub fn is_validated(&self) -> bool {
        self.status == Validation::Validated
    }

    /// Key pair rebuilt from a validated candidate.
    pub fn key_pair(&self, pk: &PublicKey, params: &BlissParams) -> Option<KeyPair> {
        validate_s1(&self.s1, pk, params)
    }
}

/// Rebuilds `s2` from `s1` and checks that the pair is a well-formed key.
pub fn validate_s1(s1: &[i64], pk: &PublicKey, params: &BlissParams) -> Option<KeyPair> {
    if s1.len() != params.n() {
        return None;
    }
    let counts = |v: &[i64], m: i64| v.iter().filter(|x| x.abs() == m).count();
    if counts(s1, 1) != params.d1 || counts(s1, 2) != params.d2 || s1.iter().any(|v| v.abs() > 2) {
        return None;
    }
    let s2 = crate::bliss::recover_s2(pk, s1, params);
    if !s2_well_formed(s2.coeffs(), params) {
        return None;
    }
    let keys = KeyPair {
        pk: pk.clone(),
        sk: SecretKey {
            s1: Poly::from_coeffs(s1.to_vec(), params.ring.two_q()),
            s2,
        },
    };
    crate::bliss::check_key_pair(&keys, params).ok()?;
    Some(keys)
}

fn s2_well_formed(s2: &[i64], params: &BlissParams) -> bool {
    let mut ones = 0;
    let mut twos = 0;
    for (i, &v) in s2.iter().enumerate() {
        let g = if i == 0 { v - 1 } else { v };
        if g % 2 != 0 || g.abs() > 4 {
            return false;
        }
        match (g / 2).abs() {
            1 => ones += 1,
            2 => twos += 1,
            _ => {}
        }
    }
    ones == params.d1 && twos == params.d2
}

fn candidate(
    s1: Vec<i64>,
    pk: &PublicKey,
    params: &BlissParams,
    confidence: Vec<f64>,
) -> KeyCandidate {
    let status = if validate_s1(&s1, pk, params).is_some() {
        Validation::Validated
    } else {
        Validation::Invalid
    };
    KeyCandidate {
        s1,
        status,
        confidence,
    }
}

/// Rounds every coordinate to the nearest integer in `[-2, 2]` and
/// validates the result against the public key.
pub fn round_and_validate(estimate: &[f64], pk: &PublicKey, params: &BlissParams) -> KeyCandidate {
    let s1 = estimate
        .iter()
        .map(|v| (v.round() as i64).clamp(-2, 2))
        .collect();
    let confidence = estimate
        .iter()
        .map(|v| 1.0 - 2.0 * (v - v.round()).abs())
        .collect();
    candidate(s1, pk, params, confidence)
}

/// Rounds using the known support sizes: the `d2` largest magnitudes
/// become `+-2`, the next `d1` become `+-1`, the rest 0. Robust to a global
/// shrinkage of the estimate.
pub fn round_by_support(estimate: &[f64], pk: &PublicKey, params: &BlissParams) -> KeyCandidate {
    let n = estimate.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| estimate[b].abs().total_cmp(&estimate[a].abs()));
    let mut s1 = vec![0i64; n];
    for (rank, &i) in order.iter().enumerate() {
        let mag = if rank < params.d2 {
            2
        } else if rank < params.d2 + params.d1 {
            1
        } else {
            0
        };
        s1[i] = if estimate[i] < 0.0 { -mag } else { mag };
    }
    // Confidence: distance of |estimate| from the cut between nonzero and
    // zero coordinates, relative to the scale of the nonzero ones.
    let k = (params.d1 + params.d2).min(n.saturating_sub(1));
    let cut = if n > k && k > 0 {
        0.5 * (estimate[order[k - 1]].abs() + estimate[order[k]].abs())
    } else {
        0.0
    };
    let scale = if k > 0 {
        estimate[order[0]].abs().max(1e-300)
    } else {
        1.0
    };
    let confidence = estimate
        .iter()
        .map(|v| ((v.abs() - cut).abs() / scale).min(1.0))
        .collect();
    candidate(s1, pk, params, confidence)
}

/// Coordinates with the lowest confidence, at most `max`.
pub fn least_confident(candidate: &KeyCandidate, max: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidate.s1.len()).collect();
    idx.sort_by(|&a, &b| candidate.confidence[a].total_cmp(&candidate.confidence[b]));
    idx.truncate(max);
    idx
}

/// Enumerates the admissible coefficient values (`{-2,...,2}`, or
/// `{-1,0,1}` without `d2` coefficients) over the flagged coordinates (first flagged
/// varies slowest) and returns the first assignment that validates, with
/// the number of candidates tried.
pub fn brute_force_completion(
    cand: &KeyCandidate,
    flagged: &[usize],
    pk: &PublicKey,
    params: &BlissParams,
    budget: u64,
) -> Result<(KeyCandidate, u64), RecoverError> {
    let n = params.n();
    let two_q = params.ring.two_q();
    let q = params.ring.q();
    let zeta = params.ring.zeta();
    if validate_s1(&cand.s1, pk, params).is_some() {
        return Ok((
            candidate(cand.s1.clone(), pk, params, cand.confidence.clone()),
            1,
        ));
    }
    let mut tried = 1u64;
    // a1 * s1 is linear in s1: precompute it with the flagged coordinates
    // cleared, plus the rotation of a1 for each flagged position.
    let mut base_s1 = cand.s1.clone();
    for &j in flagged {
        base_s1[j] = 0;
    }
    let a1 = pk.a1.coeffs();
    let base = crate::ring::negacyclic_mul_exact(a1, &base_s1);
    let rotations: Vec<Vec<i64>> = flagged
        .iter()
        .map(|&j| {
            let mut e = vec![0; n];
            e[j] = 1;
            crate::ring::negacyclic_mul_exact(a1, &e).0
        })
        .collect();
    let k = flagged.len();
    // Coefficient magnitudes the parameter set can produce.
    let top = if params.d2 > 0 { 2 } else { 1 };
    let mut digits = vec![-top; k];
    let mut acc = base.0.clone();
    for rot in &rotations {
        for (a, r) in acc.iter_mut().zip(rot) {
            *a -= top * r;
        }
    }
    loop {
        if tried >= budget {
            return Err(RecoverError::BudgetExhausted(budget));
        }
        tried += 1;
        // s2 = zeta (q - a1 s1) mod 2q must be of the form 2g + 1 with
        // small g; most assignments fail on the first coefficients.
        let small = acc.iter().enumerate().all(|(i, &v)| {
            let s2 = center(zeta * ((if i == 0 { q } else { 0 }) - v), two_q);
            (-4..=5).contains(&s2)
        });
        if small {
            let mut s1 = base_s1.clone();
            for (&j, &d) in flagged.iter().zip(&digits) {
                s1[j] = d;
            }
            if validate_s1(&s1, pk, params).is_some() {
                return Ok((candidate(s1, pk, params, cand.confidence.clone()), tried));
            }
        }
        // Odometer increment, last flagged coordinate fastest; `acc`
        // follows each digit change.
        let mut pos = k;
        loop {
            if pos == 0 {
                return Err(RecoverError::BudgetExhausted(tried));
            }
            pos -= 1;
            if digits[pos] < top {
                digits[pos] += 1;
                for (a, r) in acc.iter_mut().zip(&rotations[pos]) {
                    *a += r;
                }
                break;
            }
            digits[pos] = -top;
            for (a, r) in acc.iter_mut().zip(&rotations[pos]) {
                *a -= 2 * top * r;
            }
        }
    }
}

/// Weight form of a signature for the likelihood: `w` with
/// `<w, s> = (-1)^b <z1, s c>`.
pub fn signature_weight(sig: &Signature, b: u8) -> IntVector {
    let z: Vec<i64> = sig.z1.coeffs().to_vec();
    let mut w = crate::ring::adjoint_mul(&z, &sig.c);
    if b == 1 {
        for v in w.0.iter_mut() {
            *v = -*v;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bliss::keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rounding_validation_cases() {
        let params = BlissParams::toy64();
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let keys = keygen(&params, &mut r).unwrap();
        let s1: Vec<f64> = keys.sk.s1.coeffs().iter().map(|&v| v as f64).collect();
        assert!(round_and_validate(&s1, &keys.pk, &params).is_validated());
        let noisy: Vec<f64> = s1.iter().map(|v| v + r.random_range(-0.4..0.4)).collect();
        assert!(round_and_validate(&noisy, &keys.pk, &params).is_validated());
        for j in 0..params.n() {
            for delta in [-1.0, 1.0] {
                let mut off = s1.clone();
                off[j] += delta;
                assert!(!round_and_validate(&off, &keys.pk, &params).is_validated());
            }
        }
        let neg: Vec<f64> = s1.iter().map(|v| -v).collect();
        assert!(!round_and_validate(&neg, &keys.pk, &params).is_validated());
        let shrunk: Vec<f64> = s1.iter().map(|v| 0.1 * v).collect();
        assert!(round_by_support(&shrunk, &keys.pk, &params).is_validated());
    }

    #[test]
    fn brute_force_cases() {
        let params = BlissParams::toy64();
        let mut r = ChaCha20Rng::seed_from_u64(2);
        let keys = keygen(&params, &mut r).unwrap();
        let truth = keys.sk.s1.coeffs().to_vec();
        let exact = KeyCandidate {
            s1: truth.clone(),
            status: Validation::Invalid,
            confidence: vec![1.0; 64],
        };
        let (c, tried) = brute_force_completion(&exact, &[0, 1], &keys.pk, &params, 10).unwrap();
        assert_eq!((c.s1.clone(), tried), (truth.clone(), 1));
        let mut wrong = exact.clone();
        let nz = truth.iter().position(|&v| v != 0).unwrap();
        let z = truth.iter().position(|&v| v == 0).unwrap();
        wrong.s1[nz] = 0;
        wrong.s1[z] = 1;
        let (c, tried) = brute_force_completion(&wrong, &[nz, z], &keys.pk, &params, 100).unwrap();
        assert_eq!(c.s1, truth);
        assert!(c.is_validated());
        assert!(tried <= 26, "{tried}");
        assert!(matches!(
            brute_force_completion(&wrong, &[nz], &keys.pk, &params, 100),
            Err(RecoverError::BudgetExhausted(_))
        ));
    }

    #[test]
    fn signature_weight_is_the_signed_correlation() {
        let params = BlissParams::toy64();
        let mut r = ChaCha20Rng::seed_from_u64(3);
        let keys = keygen(&params, &mut r).unwrap();
        let (sig, t) = crate::bliss::sign(b"w", &keys, &params, &mut r).unwrap();
        let b = t.b();
        let w = signature_weight(&sig, b);
        let s1 = keys.sk.s1.coeffs();
        let sc = crate::ring::negacyclic_mul_exact(s1, &sig.c);
        let z = IntVector(sig.z1.coeffs().to_vec());
        let sign = 1 - 2 * b as i64;
        assert_eq!(w.dot(s1), sign * z.dot(&sc));
    }
}
