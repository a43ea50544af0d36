use super::{center, mul_mod_u64, pow_mod_u64, Poly, RingError, RingParams};

// Dense polynomials over F_q, lowest degree first, no trailing zeros.
type Fp = Vec<u64>;

fn trim(p: &mut Fp) {
    while p.last() == Some(&0) {
        p.pop();
    }
}

fn sub_scaled_shifted(acc: &mut Fp, p: &Fp, scale: u64, shift: usize, q: u64) {
    if acc.len() < p.len() + shift {
        acc.resize(p.len() + shift, 0);
    }
    for (i, &c) in p.iter().enumerate() {
        let t = mul_mod_u64(c, scale, q);
        acc[i + shift] = (acc[i + shift] + q - t) % q;
    }
}

fn divmod(num: &Fp, den: &Fp, q: u64) -> (Fp, Fp) {
    let mut rem = num.clone();
    let dd = den.len() - 1;
    let lead_inv = pow_mod_u64(den[dd], q - 2, q);
    if rem.len() < den.len() {
        return (Vec::new(), rem);
    }
    let mut quot = vec![0u64; rem.len() - dd];
    while rem.len() > dd && !rem.is_empty() {
        let shift = rem.len() - 1 - dd;
        let coef = mul_mod_u64(*rem.last().unwrap(), lead_inv, q);
        quot[shift] = coef;
        sub_scaled_shifted(&mut rem, den, coef, shift, q);
        trim(&mut rem);
    }
    trim(&mut quot);
    (quot, rem)
}

fn mul(a: &Fp, b: &Fp, q: u64) -> Fp {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = (out[i + j] + mul_mod_u64(x, y, q)) % q;
        }
    }
    trim(&mut out);
    out
}

fn sub(a: &Fp, b: &Fp, q: u64) -> Fp {
    let mut out = a.clone();
    if out.len() < b.len() {
        out.resize(b.len(), 0);
    }
    for (i, &y) in b.iter().enumerate() {
        out[i] = (out[i] + q - y) % q;
    }
    trim(&mut out);
    out
}

/// Inverse of `f` in `Z_q[X]/(X^n+1)` by the extended Euclidean algorithm.
///
/// `f` must carry the ring's prime modulus `q`.
pub fn poly_inverse(f: &Poly, params: &RingParams) -> Result<Poly, RingError> {
    let n = params.n();
    if f.len() != n {
        return Err(RingError::LengthMismatch {
            expected: n,
            actual: f.len(),
        });
    }
    if f.modulus() != params.q() {
        return Err(RingError::ModulusMismatch(f.modulus(), params.q()));
    }
    let q = params.q() as u64;
    let mut modulus_poly = vec![0u64; n + 1];
    modulus_poly[0] = 1;
    modulus_poly[n] = 1;
    let mut r1: Fp = f
        .coeffs()
        .iter()
        .map(|&c| c.rem_euclid(q as i64) as u64)
        .collect();
    trim(&mut r1);
    if r1.is_empty() {
        return Err(RingError::NotInvertible);
    }
    let mut r0 = modulus_poly;
    let mut t0: Fp = Vec::new();
    let mut t1: Fp = vec![1];
    while !r1.is_empty() {
        let (quot, rem) = divmod(&r0, &r1, q);
        let t2 = sub(&t0, &mul(&quot, &t1, q), q);
        r0 = std::mem::replace(&mut r1, rem);
        t0 = std::mem::replace(&mut t1, t2);
    }
    // gcd must be a nonzero constant.
    if r0.len() != 1 {
        return Err(RingError::NotInvertible);
    }
    let scale = pow_mod_u64(r0[0], q - 2, q);
    let mut coeffs = vec![0i64; n];
    for (i, &c) in t0.iter().enumerate() {
        // deg t0 < n, so no reduction mod X^n + 1 is needed.
        coeffs[i] = center(mul_mod_u64(c, scale, q) as i64, q as i64);
    }
    Ok(Poly::from_coeffs(coeffs, params.q()))
}
