use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake256;

const DOMAIN: &[u8] = b"blisslab challenge v1";

/// Sorted positions of the challenge ones for `(u_reduced, message)`.
///
/// The XOF stream is read two bytes at a time; each value mod `n` is a
/// candidate index and repeats are skipped. `n` must be a power of two
/// no larger than 65536 so the reduction is unbiased.
pub fn hash_indices(u_reduced: &[i64], message: &[u8], n: usize, kappa: usize) -> Vec<usize> {
    assert!(n.is_power_of_two() && n <= 1 << 16);
    assert!(kappa < n);
    let mut h = Shake256::default();
    h.update(DOMAIN);
    h.update(&(u_reduced.len() as u32).to_le_bytes());
    for &v in u_reduced {
        h.update(&(v as i16).to_le_bytes());
    }
    h.update(&(message.len() as u64).to_le_bytes());
    h.update(message);
    let mut reader = h.finalize_xof();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(kappa);
    let mut buf = [0u8; 2];
    while out.len() < kappa {
        reader.read(&mut buf);
        let idx = u16::from_le_bytes(buf) as usize & (n - 1);
        if !taken[idx] {
            taken[idx] = true;
            out.push(idx);
        }
    }
    out.sort_unstable();
    out
}

/// Binary polynomial with ones at `indices`.
pub fn challenge_poly(indices: &[usize], n: usize) -> Vec<i64> {
    let mut c = vec![0i64; n];
    for &i in indices {
        c[i] = 1;
    }
    c
}

/// Challenge polynomial `H(u_reduced, message)` of weight `kappa`.
pub fn hash_challenge(u_reduced: &[i64], message: &[u8], n: usize, kappa: usize) -> Vec<i64> {
    challenge_poly(&hash_indices(u_reduced, message, n, kappa), n)
}
