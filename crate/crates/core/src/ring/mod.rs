//! Polynomial arithmetic in `Z_m[X]/(X^n + 1)`.
//!
//! Coefficients are always kept in the centered interval `[-m/2, m/2)`.
//! Small degrees use the schoolbook product; degrees above
//! [`SCHOOLBOOK_MAX_N`] go through a negacyclic NTT when the modulus allows
//! it (and through CRT with a parity product for modulus `2q`).

mod inverse;
mod ntt;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use inverse::poly_inverse;
pub use ntt::NttTables;

/// Largest degree multiplied with the plain O(n^2) product.
pub const SCHOOLBOOK_MAX_N: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("degree {0} is not a power of two")]
    DegreeNotPowerOfTwo(usize),
    #[error("modulus {0} must be an odd prime")]
    BadModulus(i64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(i64, i64),
    #[error("polynomial is not invertible")]
    NotInvertible,
}

/// Degree, modulus and the constant `zeta` with `zeta * (q - 2) = 1 mod 2q`.
#[derive(Clone)]
pub struct RingParams {
    n: usize,
    q: i64,
    two_q: i64,
    zeta: i64,
    ntt: Option<Arc<NttTables>>,
}

impl fmt::Debug for RingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingParams")
            .field("n", &self.n)
            .field("q", &self.q)
            .field("zeta", &self.zeta)
            .field("ntt", &self.ntt.is_some())
            .finish()
    }
}

impl PartialEq for RingParams {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.q == other.q
    }
}

impl RingParams {
    pub fn new(n: usize, q: i64) -> Result<Self, RingError> {
        if !n.is_power_of_two() {
            return Err(RingError::DegreeNotPowerOfTwo(n));
        }
        if q < 3 || q % 2 == 0 || !is_prime_u64(q as u64) {
            return Err(RingError::BadModulus(q));
        }
        let two_q = 2 * q;
        // q - 2 is odd and coprime to q, hence invertible mod 2q.
        let zeta = mod_inverse(q - 2, two_q).ok_or(RingError::BadModulus(q))?;
        let ntt = NttTables::new(n, q).map(Arc::new);
        Ok(Self {
            n,
            q,
            two_q,
            zeta,
            ntt,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> i64 {
        self.q
    }

    pub fn two_q(&self) -> i64 {
        self.two_q
    }

    pub fn zeta(&self) -> i64 {
        self.zeta
    }

    pub fn ntt(&self) -> Option<&NttTables> {
        self.ntt.as_deref()
    }
}

/// Maps `v` into `[-m/2, m/2)`.
#[inline]
pub fn center(v: i64, m: i64) -> i64 {
    let r = v.rem_euclid(m);
    if 2 * r >= m {
        r - m
    } else {
        r
    }
}

/// Element of `Z_m[X]/(X^n+1)`, coefficients centered.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    coeffs: Vec<i64>,
    modulus: i64,
}

impl Poly {
    pub fn zero(n: usize, modulus: i64) -> Self {
        Self {
            coeffs: vec![0; n],
            modulus,
        }
    }

    pub fn one(n: usize, modulus: i64) -> Self {
        let mut p = Self::zero(n, modulus);
        p.coeffs[0] = 1;
        p
    }

    /// Monomial `coeff * X^degree`.
    pub fn monomial(n: usize, modulus: i64, degree: usize, coeff: i64) -> Self {
        let mut p = Self::zero(n, modulus);
        p.coeffs[degree] = center(coeff, modulus);
        p
    }

    pub fn from_coeffs(coeffs: Vec<i64>, modulus: i64) -> Self {
        let coeffs = coeffs.into_iter().map(|c| center(c, modulus)).collect();
        Self { coeffs, modulus }
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<i64> {
        self.coeffs
    }

    pub fn modulus(&self) -> i64 {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// Reinterprets the coefficients under another modulus.
    pub fn reduce(&self, modulus: i64) -> Self {
        Self::from_coeffs(self.coeffs.clone(), modulus)
    }

    pub fn add(&self, other: &Self) -> Result<Self, RingError> {
        self.check_compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_coeffs(coeffs, self.modulus))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, RingError> {
        self.check_compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_coeffs(coeffs, self.modulus))
    }

    pub fn scale(&self, k: i64) -> Self {
        let m = self.modulus as i128;
        let coeffs = self
            .coeffs
            .iter()
            .map(|&c| ((c as i128 * k as i128).rem_euclid(m)) as i64)
            .collect();
        Self::from_coeffs(coeffs, self.modulus)
    }

    fn check_compatible(&self, other: &Self) -> Result<(), RingError> {
        if self.len() != other.len() {
            return Err(RingError::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        if self.modulus != other.modulus {
            return Err(RingError::ModulusMismatch(self.modulus, other.modulus));
        }
        Ok(())
    }
}

/// Exact integer vector of length `n`; no modular reduction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IntVector(pub Vec<i64>);

impl IntVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &[i64]) -> i64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

impl std::ops::Deref for IntVector {
    type Target = [i64];

    fn deref(&self) -> &[i64] {
        &self.0
    }
}

/// Negacyclic product `a * b mod (X^n + 1, m)`.
pub fn poly_mul(a: &Poly, b: &Poly, params: &RingParams) -> Result<Poly, RingError> {
    a.check_compatible(b)?;
    if a.len() != params.n {
        return Err(RingError::LengthMismatch {
            expected: params.n,
            actual: a.len(),
        });
    }
    let m = a.modulus;
    if params.n > SCHOOLBOOK_MAX_N {
        if let Some(ntt) = params.ntt() {
            if m == params.q {
                return Ok(Poly::from_coeffs(ntt.mul(&a.coeffs, &b.coeffs), m));
            }
            if m == params.two_q {
                return Ok(mul_mod_two_q(a, b, params.q, ntt));
            }
        }
    }
    Ok(Poly::from_coeffs(
        schoolbook_mul(&a.coeffs, &b.coeffs, m),
        m,
    ))
}

/// O(n^2) negacyclic product, reduced mod `m`.
pub fn schoolbook_mul(a: &[i64], b: &[i64], m: i64) -> Vec<i64> {
    let n = a.len();
    assert_eq!(n, b.len(), "operand lengths differ");
    let m128 = m as i128;
    let mut acc = vec![0i128; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let prod = ai as i128 * bj as i128;
            let k = i + j;
            if k < n {
                acc[k] += prod;
            } else {
                acc[k - n] -= prod;
            }
        }
    }
    acc.into_iter()
        .map(|v| center((v.rem_euclid(m128)) as i64, m))
        .collect()
}

/// Exact negacyclic product over `Z`, for small operands such as `s1 * c`.
pub fn negacyclic_mul_exact(a: &[i64], b: &[i64]) -> IntVector {
    let n = a.len();
    assert_eq!(n, b.len(), "operand lengths differ");
    let mut out = vec![0i64; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            if bj == 0 {
                continue;
            }
            let k = i + j;
            if k < n {
                out[k] += ai * bj;
            } else {
                out[k - n] -= ai * bj;
            }
        }
    }
    IntVector(out)
}

// CRT of the product mod q (NTT) and mod 2 (parity), valid since q is odd.
fn mul_mod_two_q(a: &Poly, b: &Poly, q: i64, ntt: &NttTables) -> Poly {
    let n = a.len();
    let mod_q = ntt.mul(&a.coeffs, &b.coeffs);
    // Over Z_2 the wrap sign is irrelevant: a cyclic parity product.
    let pa: Vec<u8> = a.coeffs.iter().map(|c| (c & 1) as u8).collect();
    let pb: Vec<u8> = b.coeffs.iter().map(|c| (c & 1) as u8).collect();
    let mut parity = vec![0u8; n];
    for (i, &ai) in pa.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in pb.iter().enumerate() {
            parity[(i + j) % n] ^= bj;
        }
    }
    let two_q = 2 * q;
    let coeffs = mod_q
        .into_iter()
        .zip(parity)
        .map(|(r, p)| {
            let r = r.rem_euclid(q);
            if (r & 1) as u8 == p {
                r
            } else {
                r + q
            }
        })
        .collect();
    Poly::from_coeffs(coeffs, two_q)
}

/// Row `r` with `<r, s> = (s * c)_i` for every `s`.
pub fn rotation_row(c: &[i64], i: usize) -> IntVector {
    let n = c.len();
    assert!(i < n, "row index {i} out of range for n = {n}");
    let row = (0..n)
        .map(|j| if j <= i { c[i - j] } else { -c[n + i - j] })
        .collect();
    IntVector(row)
}

/// Vector `w` with `<w, s> = <z, s * c>` for every `s`; this is `z * c(X^-1)`.
pub fn adjoint_mul(z: &[i64], c: &[i64]) -> IntVector {
    let n = z.len();
    assert_eq!(n, c.len(), "operand lengths differ");
    let mut w = vec![0i64; n];
    for (t, &ct) in c.iter().enumerate() {
        if ct == 0 {
            continue;
        }
        // (s*c)_i gets c_t * s_{i-t} (sign flips on wrap), so s_j pairs with z_{j+t}.
        for (j, wj) in w.iter_mut().enumerate() {
            let i = j + t;
            if i < n {
                *wj += ct * z[i];
            } else {
                *wj -= ct * z[i - n];
            }
        }
    }
    IntVector(w)
}

pub(crate) fn mod_inverse(a: i64, m: i64) -> Option<i64> {
    let (mut old_r, mut r) = (a.rem_euclid(m) as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quot = old_r / r;
        (old_r, r) = (r, old_r - quot * r);
        (old_s, s) = (s, old_s - quot * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as i64)
}

pub(crate) fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub(crate) fn pow_mod_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod_u64(acc, base, m);
        }
        base = mul_mod_u64(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in SMALL {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent oracle: full product of length 2n-1, then fold with X^n = -1.
    fn oracle_mul(a: &[i64], b: &[i64], m: i64) -> Vec<i64> {
        let n = a.len();
        let mut full = vec![0i128; 2 * n];
        for i in 0..n {
            for j in 0..n {
                full[i + j] += a[i] as i128 * b[j] as i128;
            }
        }
        (0..n)
            .map(|k| center(((full[k] - full[k + n]).rem_euclid(m as i128)) as i64, m))
            .collect()
    }

    fn random_poly(rng: &mut ChaCha8Rng, n: usize, m: i64) -> Poly {
        Poly::from_coeffs((0..n).map(|_| rng.random_range(0..m)).collect(), m)
    }

    #[test]
    fn center_is_half_open() {
        assert_eq!(center(6, 12), -6);
        assert_eq!(center(5, 12), 5);
        assert_eq!(center(-6, 12), -6);
        assert_eq!(center(9, 17), -8);
        assert_eq!(center(8, 17), 8);
    }

    #[test]
    fn zeta_inverts_q_minus_two() {
        let p = RingParams::new(512, 12289).unwrap();
        assert_eq!((p.zeta() * (p.q() - 2)).rem_euclid(p.two_q()), 1);
        assert!(RingParams::new(12, 17).is_err());
        assert!(RingParams::new(8, 15).is_err());
    }

    #[test]
    fn identity_and_wrap() {
        let params = RingParams::new(8, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_poly(&mut rng, 8, 17);
        let one = Poly::one(8, 17);
        assert_eq!(poly_mul(&one, &p, &params).unwrap(), p);

        let top = Poly::monomial(8, 17, 7, 1);
        let x = Poly::monomial(8, 17, 1, 1);
        assert_eq!(
            poly_mul(&top, &x, &params).unwrap(),
            Poly::monomial(8, 17, 0, -1)
        );
    }

    #[test]
    fn length_mismatch_is_reported() {
        let params = RingParams::new(8, 17).unwrap();
        let a = Poly::zero(8, 17);
        let b = Poly::zero(4, 17);
        assert!(matches!(
            poly_mul(&a, &b, &params),
            Err(RingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn schoolbook_matches_oracle_small() {
        let params = RingParams::new(8, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let a = random_poly(&mut rng, 8, 17);
            let b = random_poly(&mut rng, 8, 17);
            let got = poly_mul(&a, &b, &params).unwrap();
            assert_eq!(got.coeffs(), &oracle_mul(a.coeffs(), b.coeffs(), 17)[..]);
        }
    }

    #[test]
    fn ntt_agrees_with_schoolbook_at_512() {
        let params = RingParams::new(512, 12289).unwrap();
        assert!(params.ntt().is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [params.q(), params.two_q()] {
            for _ in 0..5 {
                let a = random_poly(&mut rng, 512, m);
                let b = random_poly(&mut rng, 512, m);
                let fast = poly_mul(&a, &b, &params).unwrap();
                let slow = schoolbook_mul(a.coeffs(), b.coeffs(), m);
                assert_eq!(fast.coeffs(), &slow[..]);
            }
        }
    }

    #[test]
    fn rotation_row_examples() {
        let one = [1, 0, 0, 0];
        assert_eq!(rotation_row(&one, 0).0, vec![1, 0, 0, 0]);
        let x = [0, 1, 0, 0];
        assert_eq!(rotation_row(&x, 0).0, vec![0, 0, 0, -1]);
    }

    #[test]
    fn rotation_rows_exhaustive_small() {
        // Every c in {0,1}^4 and s in {-1,0,1}^4.
        let n = 4;
        for cbits in 0..(1 << n) {
            let c: Vec<i64> = (0..n).map(|j| (cbits >> j) & 1).collect();
            for sidx in 0..81 {
                let mut t = sidx;
                let s: Vec<i64> = (0..n)
                    .map(|_| {
                        let v = t % 3 - 1;
                        t /= 3;
                        v
                    })
                    .collect();
                let prod = negacyclic_mul_exact(&s, &c);
                for i in 0..n {
                    let row = rotation_row(&c, i);
                    assert!(row.iter().all(|v| (-1..=1).contains(v)));
                    assert_eq!(row.dot(&s), prod[i]);
                }
            }
        }
    }

    #[test]
    fn adjoint_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        for _ in 0..500 {
            let z: Vec<i64> = (0..n).map(|_| rng.random_range(-300..300)).collect();
            let c: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let s: Vec<i64> = (0..n).map(|_| rng.random_range(-2..=2)).collect();
            let sc = negacyclic_mul_exact(&s, &c);
            let direct: i64 = z.iter().zip(sc.iter()).map(|(a, b)| a * b).sum();
            assert_eq!(adjoint_mul(&z, &c).dot(&s), direct);
        }
    }

    #[test]
    fn primality() {
        assert!(is_prime_u64(12289));
        assert!(!is_prime_u64(12287 * 3));
        assert!(is_prime_u64((1u64 << 61) - 1));
        assert!(!is_prime_u64(3215031751));
    }
}
