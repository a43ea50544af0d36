//! GALACTICS-style discrete Gaussian sampler.
//!
//! A draw combines a base sample `x` from the narrow half-Gaussian
//! `D+_{sigma0}` (read off a cumulative distribution table), a uniform
//! `y_u in {0..K-1}` and a Bernoulli rejection with probability
//! `exp(-y_u (y_u + 2Kx) / (2 sigma^2))`, followed by a random sign. The
//! result is distributed as `D_{K sigma0}` over `Z`.
//!
//! Every draw returns a [`GaussWitness`] with the internal values the
//! leakage simulator labels traces with.

use rand::{Rng, RngCore};

/// `sqrt(1 / (2 ln 2))`, so that `rho_{sigma0}(x) = 2^{-x^2}`.
pub fn sigma0() -> f64 {
    (1.0 / (2.0 * std::f64::consts::LN_2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    /// Blending constant.
    pub k: u32,
    pub sigma0: f64,
    /// Effective standard deviation, always `k * sigma0`.
    pub sigma: f64,
    /// Tail cut in units of `sigma0`.
    pub tau: f64,
    pub cdt_bits: u32,
}

impl SamplerParams {
    /// `K = 256`, `sigma = 256 * sigma0 ~ 217.43`.
    pub fn galactics() -> Self {
        Self::with_k(256)
    }

    pub fn with_k(k: u32) -> Self {
        let s0 = sigma0();
        Self {
            k,
            sigma0: s0,
            sigma: k as f64 * s0,
            tau: 13.0,
            cdt_bits: 64,
        }
    }

    /// Derives `K = floor(sigma / sigma0 + 1)` from a requested deviation.
    /// The sampler then targets `K * sigma0`, which is slightly above `sigma`.
    pub fn for_sigma(sigma: f64) -> Self {
        let k = (sigma / sigma0() + 1.0).floor() as u32;
        Self::with_k(k)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k < 2 {
            return Err(format!("K must be at least 2, got {}", self.k));
        }
        if self.cdt_bits != 64 {
            return Err(format!(
                "only 64-bit tables are supported, got {}",
                self.cdt_bits
            ));
        }
        if !(self.tau > 0.0) || !(self.sigma0 > 0.0) {
            return Err("tau and sigma0 must be positive".into());
        }
        let expected = self.k as f64 * self.sigma0;
        if (self.sigma - expected).abs() > expected * f64::EPSILON {
            return Err(format!("sigma {} != K * sigma0 {}", self.sigma, expected));
        }
        Ok(())
    }

    /// Largest base sample the table can produce.
    pub fn max_x(&self) -> u32 {
        (self.tau * self.sigma0).ceil() as u32
    }
}

/// Cumulative distribution table of `D+_{sigma0}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdtTable {
    entries: Vec<u64>,
}

impl CdtTable {
    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index lookup for a given uniform word; also returns the number of
    /// table comparisons performed, which never depends on `r`.
    pub fn lookup_counted(&self, r: u64) -> (u32, usize) {
        let mut x = 0u64;
        let mut comparisons = 0usize;
        for &e in &self.entries {
            // Borrow bit of e - r is 1 exactly when e < r.
            let (_, borrow) = e.overflowing_sub(r);
            x += borrow as u64;
            comparisons += 1;
        }
        (x as u32, comparisons)
    }

    pub fn lookup(&self, r: u64) -> u32 {
        self.lookup_counted(r).0
    }
}

/// Probabilities of `D+_{sigma0}` truncated at `max_x`.
pub fn half_gaussian_probabilities(params: &SamplerParams) -> Vec<f64> {
    let s2 = 2.0 * params.sigma0 * params.sigma0;
    let rho: Vec<f64> = (0..=params.max_x())
        .map(|x| (-((x * x) as f64) / s2).exp())
        .collect();
    let total: f64 = rho.iter().sum();
    rho.into_iter().map(|r| r / total).collect()
}

/// Builds the table; tail mass that rounds to nothing at 64 bits is folded
/// into a saturated final entry.
pub fn build_cdt(params: &SamplerParams) -> CdtTable {
    let probs = half_gaussian_probabilities(params);
    let scale = u64::MAX as f64;
    let mut entries = Vec::new();
    for j in 0..probs.len() {
        // Work with the upper tail so entries close to 1 keep full precision.
        let tail: f64 = probs[j + 1..].iter().sum();
        let gap = (tail * scale).round();
        if gap < 1.0 {
            entries.push(u64::MAX);
            break;
        }
        entries.push(u64::MAX - gap as u64);
    }
    if let Some(last) = entries.last_mut() {
        *last = u64::MAX;
    }
    CdtTable { entries }
}

/// Full-table constant-flow CDT draw.
pub fn cdt_sample<R: RngCore + ?Sized>(table: &CdtTable, rng: &mut R) -> u32 {
    table.lookup(rng.next_u64())
}

/// Acceptance threshold `exp(-t / (2 sigma^2))` as a 64-bit fixed-point
/// fraction (`2^64` represents 1).
pub fn exp_threshold_q64(t: u64, sigma: f64) -> u128 {
    let p = (-(t as f64) / (2.0 * sigma * sigma)).exp();
    (p * 18_446_744_073_709_551_616.0) as u128
}

/// Returns `true` with probability `exp(-t / (2 sigma^2))`.
pub fn bernoulli_exp<R: RngCore + ?Sized>(t: u64, sigma: f64, rng: &mut R) -> bool {
    (rng.next_u64() as u128) < exp_threshold_q64(t, sigma)
}

/// `(-1)^lambda * v` through a broadcast mask, without a branch.
#[inline]
pub fn branchless_sign_flip(v: i64, lambda: u8) -> i64 {
    let mask = 0i64.wrapping_sub((lambda & 1) as i64);
    (v & !mask) | (v.wrapping_neg() & mask)
}

/// Internal values of one accepted draw.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GaussWitness {
    pub x: u32,
    /// Effective uniform part (sum of the shares mod K when masked).
    pub y_u: u32,
    /// Sign bit.
    pub a: u8,
    /// Rejected candidates before this one.
    pub restarts: u32,
    /// Additive shares of `y_u`; empty for the unmasked sampler.
    pub shares: Vec<u32>,
}

impl GaussWitness {
    /// What the Bernoulli-stage leak reveals: `y_u = 0` unmasked, every
    /// share zero when masked.
    pub fn yu_zero_leak(&self) -> bool {
        if self.shares.is_empty() {
            self.y_u == 0
        } else {
            self.shares.iter().all(|&s| s == 0)
        }
    }
}

/// Table plus parameters; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    params: SamplerParams,
    table: CdtTable,
}

impl GaussianSampler {
    pub fn new(params: SamplerParams) -> Self {
        let table = build_cdt(&params);
        Self { params, table }
    }

    pub fn params(&self) -> &SamplerParams {
        &self.params
    }

    pub fn table(&self) -> &CdtTable {
        &self.table
    }

    pub fn k(&self) -> u32 {
        self.params.k
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> (i64, GaussWitness) {
        self.sample_inner(1, rng)
    }

    /// Draws `y_u` as `shares` uniform parts added to `K x` one at a time.
    pub fn sample_masked<R: RngCore + ?Sized>(
        &self,
        shares: usize,
        rng: &mut R,
    ) -> (i64, GaussWitness) {
        assert!(shares >= 2, "masking needs at least two shares");
        self.sample_inner(shares, rng)
    }

    fn sample_inner<R: RngCore + ?Sized>(&self, shares: usize, rng: &mut R) -> (i64, GaussWitness) {
        let k = self.params.k as u64;
        let mut restarts = 0u32;
        loop {
            let x = cdt_sample(&self.table, rng) as u64;
            let mut parts = Vec::new();
            let y_u = if shares == 1 {
                rng.random_range(0..k)
            } else {
                let mut low = 0u64;
                for _ in 0..shares {
                    let s = rng.random_range(0..k);
                    parts.push(s as u32);
                    low = (low + s) % k;
                }
                low
            };
            let t = y_u * (y_u + 2 * k * x);
            if !bernoulli_exp(t, self.params.sigma, rng) {
                restarts += 1;
                continue;
            }
            let a = (rng.next_u32() & 1) as u8;
            let magnitude = k * x + y_u;
            // Zero is reachable with both signs; keep only one so 0 is not
            // over-weighted relative to D_sigma.
            if magnitude == 0 && a == 1 {
                restarts += 1;
                continue;
            }
            let y = branchless_sign_flip(magnitude as i64, a);
            return (
                y,
                GaussWitness {
                    x: x as u32,
                    y_u: y_u as u32,
                    a,
                    restarts,
                    shares: parts,
                },
            );
        }
    }
}

/// Exact probabilities of `D_sigma` over `[-bound, bound]` (index `y + bound`).
pub fn discrete_gaussian_probabilities(sigma: f64, bound: i64) -> Vec<f64> {
    let s2 = 2.0 * sigma * sigma;
    let rho = |y: i64| (-((y * y) as f64) / s2).exp();
    // Normalize over a range wide enough that the remainder is below f64 resolution.
    let wide = (sigma * 40.0).ceil() as i64;
    let total: f64 = (-wide..=wide).map(rho).sum();
    (-bound..=bound).map(|y| rho(y) / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi2_critical(dof: usize) -> f64 {
        ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.999)
    }

    // Chi-square statistic with bins of expectation < 5 merged into neighbours.
    fn chi2(observed: &[u64], expected_prob: &[f64], total: u64) -> (f64, usize) {
        let mut stat = 0.0;
        let mut bins = 0;
        let (mut o_acc, mut e_acc) = (0.0, 0.0);
        for (o, p) in observed.iter().zip(expected_prob) {
            o_acc += *o as f64;
            e_acc += p * total as f64;
            if e_acc >= 5.0 {
                stat += (o_acc - e_acc).powi(2) / e_acc;
                bins += 1;
                o_acc = 0.0;
                e_acc = 0.0;
            }
        }
        if e_acc > 0.0 {
            stat += (o_acc - e_acc).powi(2) / e_acc.max(1e-12);
            bins += 1;
        }
        (stat, bins - 1)
    }

    #[test]
    fn params_relations() {
        let p = SamplerParams::galactics();
        p.validate().unwrap();
        assert_eq!(p.k, 256);
        assert!((p.sigma - 217.426).abs() < 1e-3);
        let q = SamplerParams::for_sigma(215.0);
        assert_eq!(q.k, 254);
        q.validate().unwrap();
        assert!(SamplerParams::with_k(1).validate().is_err());
    }

    #[test]
    fn table_shape() {
        let table = build_cdt(&SamplerParams::galactics());
        let e = table.entries();
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*e.last().unwrap(), u64::MAX);
        assert!(table.len() <= 10, "table has {} entries", table.len());
        assert!(table.len() < 32);
    }

    #[test]
    fn comparisons_are_constant() {
        let table = build_cdt(&SamplerParams::galactics());
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut seen = std::collections::BTreeSet::new();
        for r in [
            0,
            1,
            u64::MAX,
            u64::MAX - 1,
            table.entries()[0],
            table.entries()[0] + 1,
        ] {
            let (x, count) = table.lookup_counted(r);
            seen.insert(x);
            assert_eq!(count, table.len());
        }
        for _ in 0..100_000 {
            let (x, count) = table.lookup_counted(rng.next_u64());
            seen.insert(x);
            assert_eq!(count, table.len());
        }
        assert!(seen.len() >= 4);
    }

    #[test]
    fn lookup_is_least_index_at_or_above() {
        let table = build_cdt(&SamplerParams::galactics());
        let e = table.entries();
        assert_eq!(table.lookup(0), 0);
        assert_eq!(table.lookup(e[0]), 0);
        assert_eq!(table.lookup(e[0] + 1), 1);
        assert_eq!(table.lookup(e[1]), 1);
        assert_eq!(
            table.lookup(u64::MAX),
            (e.iter().position(|&v| v == u64::MAX).unwrap()) as u32
        );
    }

    #[test]
    fn cdt_goodness_of_fit() {
        let params = SamplerParams::galactics();
        let table = build_cdt(&params);
        let probs = half_gaussian_probabilities(&params);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 1_000_000u64;
        let mut hist = vec![0u64; probs.len()];
        for _ in 0..n {
            hist[cdt_sample(&table, &mut rng) as usize] += 1;
        }
        let (stat, dof) = chi2(&hist, &probs, n);
        assert!(stat < chi2_critical(dof), "chi2 {stat} dof {dof}");
    }

    #[test]
    fn bernoulli_edges() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let sigma = SamplerParams::galactics().sigma;
        assert!((0..10_000).all(|_| bernoulli_exp(0, sigma, &mut rng)));
        let hits = (0..100_000)
            .filter(|_| bernoulli_exp(1_000_000_000, sigma, &mut rng))
            .count();
        assert!((hits as f64) < 1e-4 * 100_000.0);
        assert_eq!(exp_threshold_q64(0, sigma), 1u128 << 64);
    }

    #[test]
    fn bernoulli_rate_at_e_inverse() {
        let sigma = SamplerParams::galactics().sigma;
        let t = (2.0 * sigma * sigma).round() as u64;
        let expected = (-(t as f64) / (2.0 * sigma * sigma)).exp();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| bernoulli_exp(t, sigma, &mut rng)).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - expected).abs() < 0.01, "{freq} vs {expected}");
        assert!((expected - (-1f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn sign_flip_exhaustive() {
        assert_eq!(branchless_sign_flip(5, 0), 5);
        assert_eq!(branchless_sign_flip(5, 1), -5);
        for v in -(1i64 << 16) + 1..(1i64 << 16) {
            assert_eq!(branchless_sign_flip(v, 0), v);
            assert_eq!(branchless_sign_flip(v, 1), -v);
        }
    }

    #[test]
    fn draws_respect_construction() {
        let sampler = GaussianSampler::new(SamplerParams::galactics());
        let k = sampler.k() as i64;
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        for _ in 0..200_000 {
            let (y, w) = sampler.sample(&mut rng);
            assert!(w.y_u < 256 && w.a <= 1 && w.x <= sampler.params().max_x());
            let m = y.abs() % k;
            assert!(m == w.y_u as i64 || m == k - w.y_u as i64 || (m == 0 && w.y_u == 0));
            if w.y_u == 0 {
                assert_eq!(y % k, 0);
            }
            assert_eq!(y, branchless_sign_flip(k * w.x as i64 + w.y_u as i64, w.a));
        }
    }

    fn histogram(draws: impl Iterator<Item = i64>, bound: i64) -> (Vec<u64>, u64) {
        let mut hist = vec![0u64; (2 * bound + 1) as usize];
        let mut n = 0;
        for y in draws {
            let idx = (y.clamp(-bound, bound) + bound) as usize;
            hist[idx] += 1;
            n += 1;
        }
        (hist, n)
    }

    #[test]
    fn gaussian_variance_and_fit() {
        let sampler = GaussianSampler::new(SamplerParams::galactics());
        let sigma = sampler.params().sigma;
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let n = 1_000_000;
        let draws: Vec<i64> = (0..n).map(|_| sampler.sample(&mut rng).0).collect();
        let mean = draws.iter().sum::<i64>() as f64 / n as f64;
        let var = draws
            .iter()
            .map(|&y| (y as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "variance {var}");

        let bound = 1400;
        let (hist, total) = histogram(draws.into_iter(), bound);
        let mut probs = discrete_gaussian_probabilities(sigma, bound);
        // Clamped tails carry the remaining mass.
        let inner: f64 = probs[1..probs.len() - 1].iter().sum();
        let tail = (1.0 - inner) / 2.0;
        probs[0] = tail;
        let last = probs.len() - 1;
        probs[last] = tail;
        let (stat, dof) = chi2(&hist, &probs, total);
        assert!(stat < chi2_critical(dof), "chi2 {stat} dof {dof}");
    }

    #[test]
    fn masked_sampler_matches_unmasked() {
        let sampler = GaussianSampler::new(SamplerParams::galactics());
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let n = 1_000_000;
        let bound = 1200;
        let (h1, _) = histogram((0..n).map(|_| sampler.sample(&mut rng).0), bound);
        let mut share_checks = 0;
        let (h2, _) = histogram(
            (0..n).map(|_| {
                let (y, w) = sampler.sample_masked(2, &mut rng);
                assert_eq!(w.shares.len(), 2);
                assert_eq!(w.shares.iter().sum::<u32>() % 256, w.y_u);
                share_checks += 1;
                y
            }),
            bound,
        );
        assert_eq!(share_checks, n);
        // Two-sample chi-square homogeneity test on merged bins.
        let (mut stat, mut bins) = (0.0, 0usize);
        let (mut a, mut b) = (0.0, 0.0);
        for (x, y) in h1.iter().zip(&h2) {
            a += *x as f64;
            b += *y as f64;
            if a + b >= 20.0 {
                stat += (a - b).powi(2) / (a + b);
                bins += 1;
                a = 0.0;
                b = 0.0;
            }
        }
        assert!(stat < chi2_critical(bins - 1), "chi2 {stat} bins {bins}");
    }

    #[test]
    fn sigma_215_switch() {
        let sampler = GaussianSampler::new(SamplerParams::for_sigma(215.0));
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let (_, w) = sampler.sample(&mut rng);
            assert!(w.y_u < 254);
        }
    }
}
