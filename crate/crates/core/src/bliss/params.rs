use crate::ring::{RingError, RingParams};
use crate::sampler::SamplerParams;

/// Scheme parameters.
#[derive(Debug, Clone)]
pub struct BlissParams {
    pub name: &'static str,
    pub ring: RingParams,
    pub sampler: SamplerParams,
    /// Entries of `f` and `g` in `{+-1}`.
    pub d1: usize,
    /// Entries of `f` and `g` in `{+-2}`.
    pub d2: usize,
    /// Weight of a challenge.
    pub kappa: usize,
    /// Bits dropped from `u` before hashing.
    pub d: u32,
    /// `floor(2q / 2^d)`.
    pub p: i64,
    /// Keys with `N_kappa(S)` above this are rejected at generation.
    pub nks_max: i64,
    /// Rejection constant `exp(nks_max / (2 sigma^2))`.
    pub m_rej: f64,
    pub b2: f64,
    pub binf: i64,
    pub max_keygen_restarts: u32,
    pub max_sign_restarts: u32,
}

impl BlissParams {
    /// BLISS-I with the GALACTICS blending constant `K = 256`.
    pub fn bliss1() -> Self {
        Self::build("bliss1", 512, 154, 0, 23, 46479, 12872.0, 2100)
            .expect("BLISS-I parameters are valid")
    }

    /// Degree-64 instance for fast experiments. The norm bound is scaled to
    /// the smaller dimension; `nks_max` sits above every key drawn in
    /// practice at this size.
    pub fn toy64() -> Self {
        Self::build("toy64", 64, 16, 0, 8, 2100, 6000.0, 2100).expect("toy parameters are valid")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "bliss1" => Some(Self::bliss1()),
            "toy64" => Some(Self::toy64()),
            _ => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        name: &'static str,
        n: usize,
        d1: usize,
        d2: usize,
        kappa: usize,
        nks_max: i64,
        b2: f64,
        binf: i64,
    ) -> Result<Self, RingError> {
        let ring = RingParams::new(n, 12289)?;
        let sampler = SamplerParams::galactics();
        let d = 10;
        let p = ring.two_q() >> d;
        let m_rej = (nks_max as f64 / (2.0 * sampler.sigma * sampler.sigma)).exp();
        Ok(Self {
            name,
            ring,
            sampler,
            d1,
            d2,
            kappa,
            d,
            p,
            nks_max,
            m_rej,
            b2,
            binf,
            max_keygen_restarts: 10_000,
            max_sign_restarts: 10_000,
        })
    }

    /// Replaces the sampler with one derived from a requested `sigma`
    /// (`K = floor(sigma / sigma0 + 1)`).
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sampler = SamplerParams::for_sigma(sigma);
        let s = self.sampler.sigma;
        self.m_rej = (self.nks_max as f64 / (2.0 * s * s)).exp();
        self
    }

    pub fn n(&self) -> usize {
        self.ring.n()
    }

    pub fn k(&self) -> i64 {
        self.sampler.k as i64
    }

    pub fn sigma(&self) -> f64 {
        self.sampler.sigma
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        if self.d1 + 2 * self.d2 > n {
            return Err("d1 + 2 d2 exceeds n".into());
        }
        if self.kappa == 0 || self.kappa >= n {
            return Err("kappa must be in 1..n".into());
        }
        if self.p != self.ring.two_q() >> self.d {
            return Err("p must equal floor(2q / 2^d)".into());
        }
        self.sampler.validate()
    }
}
