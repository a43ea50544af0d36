use super::{mul_mod_u64, pow_mod_u64};

/// Precomputed twiddles for the negacyclic transform of length `n` mod `q`.
#[derive(Debug, Clone)]
pub struct NttTables {
    n: usize,
    q: u64,
    psi_pows: Vec<u64>,
    psi_inv_pows: Vec<u64>,
    omega_pows: Vec<u64>,
    omega_inv_pows: Vec<u64>,
    n_inv: u64,
}

impl NttTables {
    /// Returns `None` unless `q` is prime with `q = 1 mod 2n`.
    pub fn new(n: usize, q: i64) -> Option<Self> {
        if n < 2 || !n.is_power_of_two() || q < 3 {
            return None;
        }
        let q = q as u64;
        if !super::is_prime_u64(q) || !(q - 1).is_multiple_of(2 * n as u64) {
            return None;
        }
        let g = primitive_root(q)?;
        let psi = pow_mod_u64(g, (q - 1) / (2 * n as u64), q);
        let psi_inv = pow_mod_u64(psi, q - 2, q);
        let omega = mul_mod_u64(psi, psi, q);
        let omega_inv = mul_mod_u64(psi_inv, psi_inv, q);
        let powers = |base: u64| {
            let mut v = Vec::with_capacity(n);
            let mut acc = 1u64;
            for _ in 0..n {
                v.push(acc);
                acc = mul_mod_u64(acc, base, q);
            }
            v
        };
        Some(Self {
            n,
            q,
            psi_pows: powers(psi),
            psi_inv_pows: powers(psi_inv),
            omega_pows: powers(omega),
            omega_inv_pows: powers(omega_inv),
            n_inv: pow_mod_u64(n as u64, q - 2, q),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Negacyclic product; output coefficients in `[0, q)`.
    pub fn mul(&self, a: &[i64], b: &[i64]) -> Vec<i64> {
        let mut fa = self.forward(a);
        let fb = self.forward(b);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = mul_mod_u64(*x, *y, self.q);
        }
        self.inverse(fa).into_iter().map(|v| v as i64).collect()
    }

    pub fn forward(&self, a: &[i64]) -> Vec<u64> {
        assert_eq!(a.len(), self.n);
        let q = self.q as i64;
        let mut v: Vec<u64> = a
            .iter()
            .zip(&self.psi_pows)
            .map(|(&c, &w)| mul_mod_u64(c.rem_euclid(q) as u64, w, self.q))
            .collect();
        self.transform(&mut v, &self.omega_pows);
        v
    }

    pub fn inverse(&self, mut v: Vec<u64>) -> Vec<u64> {
        self.transform(&mut v, &self.omega_inv_pows);
        for (x, &w) in v.iter_mut().zip(&self.psi_inv_pows) {
            *x = mul_mod_u64(mul_mod_u64(*x, w, self.q), self.n_inv, self.q);
        }
        v
    }

    // Iterative radix-2 Cooley-Tukey with bit reversal.
    fn transform(&self, v: &mut [u64], roots: &[u64]) {
        let n = self.n;
        let q = self.q;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                v.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let w = roots[k * step];
                    let u = v[start + k];
                    let t = mul_mod_u64(v[start + k + len / 2], w, q);
                    v[start + k] = (u + t) % q;
                    v[start + k + len / 2] = (u + q - t) % q;
                }
            }
            len <<= 1;
        }
    }
}

fn primitive_root(q: u64) -> Option<u64> {
    let mut factors = Vec::new();
    let mut m = q - 1;
    let mut p = 2;
    while p * p <= m {
        if m.is_multiple_of(p) {
            factors.push(p);
            while m.is_multiple_of(p) {
                m /= p;
            }
        }
        p += 1;
    }
    if m > 1 {
        factors.push(m);
    }
    (2..q).find(|&g| factors.iter().all(|&f| pow_mod_u64(g, (q - 1) / f, q) != 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let t = NttTables::new(64, 12289).unwrap();
        let a: Vec<i64> = (0..64).map(|i| (i * 37 % 101) - 50).collect();
        let back = t.inverse(t.forward(&a));
        for (x, y) in back.iter().zip(&a) {
            assert_eq!(*x as i64, y.rem_euclid(12289));
        }
    }

    #[test]
    fn unsupported_moduli() {
        assert!(NttTables::new(512, 17).is_none());
        assert!(NttTables::new(8, 17).is_some());
        assert_eq!(primitive_root(12289), Some(11));
    }
}
