use rand::seq::index::sample as sample_indices;
use rand::RngCore;

use super::{validate_s1, EquationSystem, KeyCandidate, RecoverError, Validation};
use crate::bliss::{BlissParams, PublicKey, Signature};
use crate::ring::{is_prime_u64, rotation_row, IntVector};

/// Rows `rotation_row(c_k, i)` for coefficients flagged `y_u = 0` whose
/// `z1` coefficient is a multiple of `K`; each should satisfy `<row, s1> = 0`.
pub fn collect_equations_attack2(
    yu_flags: &[Vec<bool>],
    signatures: &[Signature],
    k: i64,
) -> EquationSystem {
    let n = signatures.first().map_or(0, |s| s.z1.len());
    let mut sys = EquationSystem::new(n);
    for (sig_idx, (flags, sig)) in yu_flags.iter().zip(signatures).enumerate() {
        for (i, &flag) in flags.iter().enumerate() {
            if flag && sig.z1.coeffs()[i].rem_euclid(k) == 0 {
                sys.push(rotation_row(&sig.c, i), 0, (sig_idx, i), 1.0);
            }
        }
    }
    sys
}

/// Uniformly random prime in `[2^61, 2^62)`.
pub fn random_prime_62<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    loop {
        let c = (rng.next_u64() & ((1 << 62) - 1)) | (1 << 61) | 1;
        if is_prime_u64(c) {
            return c;
        }
    }
}

/// Montgomery arithmetic modulo an odd `p < 2^62`.
struct Mont {
    p: u64,
    /// `-p^-1 mod 2^64`.
    neg_inv: u64,
    /// `2^128 mod p`.
    r2: u64,
}

impl Mont {
    fn new(p: u64) -> Self {
        assert!(p % 2 == 1 && p < 1 << 62);
        // Newton iteration for p^-1 mod 2^64.
        let mut inv: u64 = 1;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(p.wrapping_mul(inv)));
        }
        let r = ((1u128 << 64) % p as u128) as u64;
        let r2 = ((r as u128 * r as u128) % p as u128) as u64;
        Self {
            p,
            neg_inv: inv.wrapping_neg(),
            r2,
        }
    }

    #[inline]
    fn mul(&self, a: u64, b: u64) -> u64 {
        let t = a as u128 * b as u128;
        let m = (t as u64).wrapping_mul(self.neg_inv);
        let u = ((t + m as u128 * self.p as u128) >> 64) as u64;
        if u >= self.p {
            u - self.p
        } else {
            u
        }
    }

    #[inline]
    fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    fn to_mont(&self, a: i64) -> u64 {
        let r = a.rem_euclid(self.p as i64) as u64;
        self.mul(r, self.r2)
    }

    fn from_mont(&self, a: u64) -> u64 {
        self.mul(a, 1)
    }

    fn inv(&self, a: u64) -> u64 {
        // Fermat: a^(p-2), all in Montgomery form.
        let mut result = self.to_mont(1);
        let mut base = a;
        let mut e = self.p - 2;
        while e > 0 {
            if e & 1 == 1 {
                result = self.mul(result, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        result
    }
}

/// Basis of `{ v : rows * v = 0 mod p }`, entries in `[0, p)`.
pub fn kernel_mod_prime(rows: &[IntVector], n: usize, p: u64) -> Vec<Vec<u64>> {
    let mt = Mont::new(p);
    let mut a: Vec<Vec<u64>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| mt.to_mont(v)).collect())
        .collect();
    let m = a.len();
    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let Some(pr) = (row..m).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(row, pr);
        let inv = mt.inv(a[row][col]);
        for v in a[row][col..].iter_mut() {
            *v = mt.mul(*v, inv);
        }
        let (above, rest) = a.split_at_mut(row);
        let (pivot, below) = rest.split_first_mut().expect("row < m");
        let pivot = &*pivot;
        for other in above.iter_mut().chain(below.iter_mut()) {
            let f = other[col];
            if f == 0 {
                continue;
            }
            for (o, &pv) in other[col..].iter_mut().zip(&pivot[col..]) {
                *o = mt.sub(*o, mt.mul(f, pv));
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    let mut is_pivot = vec![false; n];
    for &c in &pivot_cols {
        is_pivot[c] = true;
    }
    (0..n)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut v = vec![0u64; n];
            v[free] = 1;
            for (r, &pc) in pivot_cols.iter().enumerate() {
                let e = mt.from_mont(a[r][free]);
                v[pc] = if e == 0 { 0 } else { p - e };
            }
            v
        })
        .collect()
}

/// Reduced kernel basis: `basis[t]` has a 1 at `free[t]` and 0 at every
/// other free column, so any kernel vector `v` equals
/// `sum_t v[free[t]] * basis[t]`.
fn free_columns(basis: &[Vec<u64>]) -> Vec<usize> {
    basis
        .iter()
        .map(|v| {
            v.iter()
                .position(|&x| x == 1)
                .expect("basis vector has its free coordinate set")
        })
        .collect()
}

/// Number of digit strings of length `len` over `[-top, top]` with at most
/// `weight` nonzero digits, saturating.
fn sparse_count(len: usize, weight: usize, top: i64) -> u64 {
    let mut total = 0u64;
    let mut binom = 1u64;
    for i in 0..=weight.min(len) {
        if i > 0 {
            binom = binom.saturating_mul((len - i + 1) as u64) / i as u64;
        }
        total =
            total.saturating_add(binom.saturating_mul((2 * top as u64).saturating_pow(i as u32)));
    }
    total
}

/// Depth-first walk over digit strings with at most `weight` nonzero
/// digits. `f` receives `sum_t digit[t] * cols[t][c] mod p` for each probe
/// `c` and the digits; returning `false` stops the walk.
struct SparseWalk<'a> {
    cols: &'a [[u64; 2]],
    top: i64,
    p: u64,
    digits: Vec<i64>,
}

impl SparseWalk<'_> {
    fn run(&mut self, weight: usize, f: &mut impl FnMut([u64; 2], &[i64]) -> bool) -> bool {
        self.step(0, weight, [0, 0], f)
    }

    fn step(
        &mut self,
        pos: usize,
        weight: usize,
        acc: [u64; 2],
        f: &mut impl FnMut([u64; 2], &[i64]) -> bool,
    ) -> bool {
        if pos == self.cols.len() {
            return f(acc, &self.digits);
        }
        self.digits[pos] = 0;
        if !self.step(pos + 1, weight, acc, f) {
            return false;
        }
        if weight == 0 {
            return true;
        }
        for d in (-self.top..=self.top).filter(|&d| d != 0) {
            self.digits[pos] = d;
            let coef = d.rem_euclid(self.p as i64) as u128;
            let next = [0, 1].map(|c| {
                ((acc[c] as u128 + coef * self.cols[pos][c] as u128) % self.p as u128) as u64
            });
            if !self.step(pos + 1, weight - 1, next, f) {
                self.digits[pos] = 0;
                return false;
            }
        }
        self.digits[pos] = 0;
        true
    }
}

/// Searches the kernel for a small vector that validates. The key's entries
/// at the free columns are exactly the coefficients that combine the basis
/// into it, so the search is over small digit strings, split in two halves
/// that meet on two probe coordinates. Each half visits digit strings with
/// few nonzeros first, as the key is sparse, up to half of `budget`. With
/// nullity 1 this is the usual scale-and-sign lift; larger nullities are the
/// brute-force search over a kernel left too large by missing rows.
fn search_kernel(
    basis: &[Vec<u64>],
    p: u64,
    pk: &PublicKey,
    params: &BlissParams,
    budget: u64,
) -> (Option<Vec<i64>>, u64) {
    let k = basis.len();
    let n = params.n();
    let top = if params.d2 > 0 { 2i64 } else { 1 };
    let free = free_columns(basis);
    let lift = |x: u64| {
        if x > p / 2 {
            -((p - x) as i64)
        } else {
            x as i64
        }
    };
    // Probe on the two pivot columns where the basis has the most nonzeros,
    // so that distinct digit strings rarely collide.
    let mut pivots: Vec<usize> = (0..n).filter(|j| !free.contains(j)).collect();
    pivots.sort_by_key(|&j| std::cmp::Reverse(basis.iter().filter(|v| v[j] != 0).count()));
    let probes = match pivots.as_slice() {
        [a, b, ..] => [*a, *b],
        [a] => [*a, *a],
        [] => [free[0], free[0]],
    };
    let cols: Vec<[u64; 2]> = basis.iter().map(|v| [v[probes[0]], v[probes[1]]]).collect();
    let (left, right) = cols.split_at(k / 2);
    let half = (budget / 2).max(1);
    let weight_for = |len: usize| {
        (0..=len)
            .take_while(|&w| sparse_count(len, w, top) <= half)
            .last()
            .unwrap_or(0)
    };
    let (wl, wr) = (weight_for(left.len()), weight_for(right.len()));

    let mut table: Vec<(u64, u64, u32)> = Vec::new();
    let mut walk = SparseWalk {
        cols: left,
        top,
        p,
        digits: vec![0; left.len()],
    };
    walk.run(wl, &mut |acc, _| {
        table.push((acc[0], acc[1], table.len() as u32));
        true
    });
    let mut tried = table.len() as u64;
    table.sort_unstable();
    let left_digits = |ordinal: u32| -> Vec<i64> {
        let mut seen = 0u32;
        let mut out = Vec::new();
        let mut walk = SparseWalk {
            cols: left,
            top,
            p,
            digits: vec![0; left.len()],
        };
        walk.run(wl, &mut |_, digits| {
            if seen == ordinal {
                out = digits.to_vec();
                return false;
            }
            seen += 1;
            true
        });
        out
    };
    let small = |x: u64| lift(x).abs() <= top;

    let mut found = None;
    let mut walk = SparseWalk {
        cols: right,
        top,
        p,
        digits: vec![0; right.len()],
    };
    walk.run(wr, &mut |acc, right_digits| {
        tried += 1;
        for e in -top..=top {
            let target = (e.rem_euclid(p as i64) as u64 + p - acc[0]) % p;
            let from = table.partition_point(|t| t.0 < target);
            for &(_, second, ordinal) in table[from..].iter().take_while(|t| t.0 == target) {
                if !small((second + acc[1]) % p) {
                    continue;
                }
                let mut digits = left_digits(ordinal);
                digits.extend_from_slice(right_digits);
                if digits.iter().all(|&d| d == 0) {
                    continue;
                }
                if let Some(s1) = combine(basis, &digits, p, top) {
                    if validate_s1(&s1, pk, params).is_some() {
                        found = Some(s1);
                        return false;
                    }
                }
            }
        }
        true
    });
    (found, tried)
}

/// `sum_t digits[t] * basis[t]`, lifted to centered integers, if every
/// entry lies in `[-top, top]`.
fn combine(basis: &[Vec<u64>], digits: &[i64], p: u64, top: i64) -> Option<Vec<i64>> {
    let n = basis[0].len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = 0u128;
        for (v, &d) in basis.iter().zip(digits) {
            acc = (acc + d.rem_euclid(p as i64) as u128 * v[j] as u128) % p as u128;
        }
        let x = acc as u64;
        let x = if x > p / 2 {
            -((p - x) as i64)
        } else {
            x as i64
        };
        if x.abs() > top {
            return None;
        }
        out.push(x);
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOptions {
    /// Random row subsets tried before giving up.
    pub max_subsets: usize,
    /// Largest kernel dimension searched.
    pub max_nullity: usize,
    /// Digit strings enumerated per kernel, both halves together.
    pub search_budget: u64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            max_subsets: 50,
            max_nullity: 48,
            search_budget: 1 << 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub candidate: KeyCandidate,
    pub rows_available: usize,
    /// Subsets tried, including the successful one.
    pub subsets_tried: usize,
    /// Rows in the successful subset.
    pub rows_used: usize,
    /// Kernel dimension of the successful subset.
    pub nullity: usize,
    /// Kernel candidates enumerated over all subsets.
    pub candidates_tried: u64,
}

/// Repeatedly picks `n - 1` random rows (all rows when fewer are
/// available), computes their kernel modulo a fresh random prime and
/// searches it for a small vector that validates against the public key.
pub fn kernel_attack<R: RngCore + ?Sized>(
    sys: &EquationSystem,
    pk: &PublicKey,
    params: &BlissParams,
    rng: &mut R,
    opts: &KernelOptions,
) -> Result<KernelReport, RecoverError> {
    let n = params.n();
    let take = sys.len().min(n - 1);
    let min_rows = (n - 1).saturating_sub(opts.max_nullity);
    if take < min_rows || take == 0 {
        return Err(RecoverError::RecoveryFailed(format!(
            "{} kernel equations, at least {min_rows} needed",
            sys.len()
        )));
    }
    // With every row in use a second subset is the same subset.
    let subsets = if take == sys.len() {
        1
    } else {
        opts.max_subsets
    };
    let mut candidates = 0;
    for attempt in 1..=subsets {
        let pick = sample_indices(rng, sys.len(), take);
        let rows: Vec<IntVector> = pick.iter().map(|i| sys.rows[i].clone()).collect();
        let p = random_prime_62(rng);
        let basis = kernel_mod_prime(&rows, n, p);
        if basis.is_empty() || basis.len() > opts.max_nullity {
            continue;
        }
        let (found, tried) = search_kernel(&basis, p, pk, params, opts.search_budget);
        candidates += tried;
        if let Some(s1) = found {
            return Ok(KernelReport {
                candidate: KeyCandidate {
                    s1,
                    status: Validation::Validated,
                    confidence: Vec::new(),
                },
                rows_available: sys.len(),
                subsets_tried: attempt,
                rows_used: take,
                nullity: basis.len(),
                candidates_tried: candidates,
            });
        }
    }
    Err(RecoverError::RecoveryFailed(format!(
        "no valid kernel vector in {subsets} subsets of {take} rows out of {}",
        sys.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{One, Zero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Kernel basis over Q by fraction-exact Gauss-Jordan elimination.
    fn rational_kernel(rows: &[IntVector], n: usize) -> Vec<Vec<BigRational>> {
        let mut a: Vec<Vec<BigRational>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&v| BigRational::from_integer(BigInt::from(v)))
                    .collect()
            })
            .collect();
        let m = a.len();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == m {
                break;
            }
            let Some(pr) = (row..m).find(|&r| !a[r][col].is_zero()) else {
                continue;
            };
            a.swap(row, pr);
            let inv = BigRational::one() / a[row][col].clone();
            for v in a[row].iter_mut() {
                *v = v.clone() * inv.clone();
            }
            for r in 0..m {
                if r != row && !a[r][col].is_zero() {
                    let f = a[r][col].clone();
                    for c in 0..n {
                        let d = f.clone() * a[row][c].clone();
                        a[r][c] = a[r][c].clone() - d;
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        (0..n)
            .filter(|c| !pivots.contains(c))
            .map(|free| {
                let mut v = vec![BigRational::zero(); n];
                v[free] = BigRational::one();
                for (r, &pc) in pivots.iter().enumerate() {
                    v[pc] = -a[r][free].clone();
                }
                v
            })
            .collect()
    }

    fn to_mod(x: &BigRational, p: u64) -> u64 {
        let pb = BigInt::from(p);
        let num = ((x.numer() % &pb) + &pb) % &pb;
        let den = ((x.denom() % &pb) + &pb) % &pb;
        let mt = Mont::new(p);
        let d: u64 = den.try_into().unwrap();
        let dinv = mt.from_mont(mt.inv(mt.to_mont(d as i64)));
        let nn: u64 = num.try_into().unwrap();
        ((nn as u128 * dinv as u128) % p as u128) as u64
    }

    #[test]
    fn montgomery_matches_plain_arithmetic() {
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let p = random_prime_62(&mut r);
        let mt = Mont::new(p);
        for _ in 0..10_000 {
            let a = r.random_range(0..p);
            let b = r.random_range(0..p);
            let prod = mt.from_mont(mt.mul(mt.to_mont(a as i64), mt.to_mont(b as i64)));
            assert_eq!(prod, ((a as u128 * b as u128) % p as u128) as u64);
        }
        let a = mt.to_mont(12345);
        assert_eq!(mt.from_mont(mt.mul(a, mt.inv(a))), 1);
    }

    #[test]
    fn prime_kernel_matches_rational_elimination() {
        let mut r = ChaCha20Rng::seed_from_u64(2);
        for trial in 0..200 {
            let n = r.random_range(2..=16);
            let m = r.random_range(1..=n + 2);
            let rows: Vec<IntVector> = (0..m)
                .map(|_| IntVector((0..n).map(|_| r.random_range(-2..=2)).collect()))
                .collect();
            let p = random_prime_62(&mut r);
            let modp = kernel_mod_prime(&rows, n, p);
            let exact = rational_kernel(&rows, n);
            assert_eq!(modp.len(), exact.len(), "trial {trial}");
            for (a, b) in modp.iter().zip(&exact) {
                let b: Vec<u64> = b.iter().map(|x| to_mod(x, p)).collect();
                assert_eq!(a, &b, "trial {trial}");
            }
            for v in &modp {
                for row in &rows {
                    let s = row.iter().zip(v).fold(0i128, |acc, (&x, &y)| {
                        (acc + x as i128 * y as i128).rem_euclid(p as i128)
                    });
                    assert_eq!(s, 0);
                }
            }
        }
    }

    #[test]
    fn kernel_search_finds_small_vectors() {
        let params = BlissParams::toy64();
        let mut r = ChaCha20Rng::seed_from_u64(3);
        let keys = crate::bliss::keygen(&params, &mut r).unwrap();
        let s1 = keys.sk.s1.coeffs();
        let n = params.n();
        // Random rows orthogonal to s1, fewer than n - 1 of them.
        for m in [n - 1, n - 3, n - 20, n - 30] {
            let mut rows = Vec::new();
            while rows.len() < m {
                let mut row: Vec<i64> = (0..n).map(|_| r.random_range(-3..=3)).collect();
                let j = s1.iter().position(|&v| v != 0).unwrap();
                row[j] = 0;
                let rest: i64 = row.iter().zip(s1).map(|(a, b)| a * b).sum();
                row[j] = -rest * s1[j];
                rows.push(IntVector(row));
            }
            let p = random_prime_62(&mut r);
            let basis = kernel_mod_prime(&rows, n, p);
            assert_eq!(basis.len(), n - m);
            let (found, _) = search_kernel(&basis, p, &keys.pk, &params, 1 << 21);
            assert_eq!(found.as_deref(), Some(s1));
        }
    }
}
