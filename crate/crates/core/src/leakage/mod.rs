//! Synthetic power traces for the four leak points of the signer.
//!
//! A trace is `template[label] + p * masked[label] + noise`, where `p` is a
//! uniformly random polarity in `{-1, +1}` drawn once per trace and `noise`
//! is white Gaussian. The polarity-randomized part has zero mean, so only a
//! nonlinear classifier can use it.

mod archive;
mod calibrate;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bliss::SignTranscript;
use crate::sampler::SamplerParams;

pub use archive::{
    decode_archive, encode_archive, read_archive, write_archive, ArchiveError, TraceArchive,
    ARCHIVE_VERSION,
};
pub use calibrate::{
    calibrate_noise, measure_accuracy, CalibrationError, CalibrationOptions, ClassifierKind,
};

/// Samples per trace in the default profiles.
pub const DEFAULT_TRACE_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeakPoint {
    /// Value `x` returned by the table lookup.
    CdtX,
    /// Whether the uniform part `y_u` is zero.
    YuZero,
    /// Sign bit `a` of a Gaussian draw.
    SignA,
    /// Sign-flip bit `b` of a signature.
    SignB,
}

impl LeakPoint {
    pub const ALL: [LeakPoint; 4] = [
        LeakPoint::CdtX,
        LeakPoint::YuZero,
        LeakPoint::SignA,
        LeakPoint::SignB,
    ];

    pub fn code(self) -> u8 {
        match self {
            LeakPoint::CdtX => 0,
            LeakPoint::YuZero => 1,
            LeakPoint::SignA => 2,
            LeakPoint::SignB => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LeakPoint::CdtX => "cdt-x",
            LeakPoint::YuZero => "yu-zero",
            LeakPoint::SignA => "sign-a",
            LeakPoint::SignB => "sign-b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl std::fmt::Display for LeakPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeakageError {
    #[error("label {label} has no template (profile has {classes})")]
    UnknownLabel { label: u8, classes: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakProfile {
    pub point: LeakPoint,
    pub trace_len: usize,
    /// Mean trace per label.
    pub templates: Vec<Vec<f64>>,
    /// Polarity-randomized component per label; empty when unused.
    pub masked: Vec<Vec<f64>>,
    pub noise_std: f64,
    /// Label frequencies of the generating process.
    pub priors: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f32>,
    pub label: u8,
}

// Sample windows of the default profiles.
const CDT_BUMP: std::ops::Range<usize> = 8..16;
const CDT_MASKED: std::ops::Range<usize> = 24..32;
const YU_BUMP: std::ops::Range<usize> = 40..44;
const YU_MASKED: std::ops::Range<usize> = 20..24;
const SIGN_A_BUMP: std::ops::Range<usize> = 12..16;
const SIGN_B_BUMP: std::ops::Range<usize> = 48..52;

const CDT_BUMP_AMP: f64 = 1.0;
const CDT_MASKED_AMP: f64 = 1.8;
const YU_BUMP_AMP: f64 = 0.05;
const YU_MASKED_AMP: f64 = 1.0;
const SIGN_AMP: f64 = 1.0;

/// Noise levels of the default profiles, calibrated against the reference
/// classifiers of the `learn` module.
pub const DEFAULT_NOISE_CDT_X: f64 = 1.85;
pub const DEFAULT_NOISE_YU_ZERO: f64 = 0.27;
pub const DEFAULT_NOISE_SIGN_A: f64 = 0.65;
pub const DEFAULT_NOISE_SIGN_B: f64 = 0.7;

fn baseline(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (std::f64::consts::TAU * i as f64 / 16.0).sin())
        .collect()
}

fn with_window(base: &[f64], window: std::ops::Range<usize>, amp: f64) -> Vec<f64> {
    let mut v = base.to_vec();
    for s in &mut v[window] {
        *s += amp;
    }
    v
}

/// Frequencies of `x`, of `y_u = 0` and of `a = 1` among accepted draws of
/// the blended sampler.
pub fn accepted_label_frequencies(params: &SamplerParams) -> (Vec<f64>, f64, f64) {
    let k = params.k as u64;
    let s2 = 2.0 * params.sigma * params.sigma;
    let max_x = params.max_x() as u64;
    let mut px = vec![0.0; max_x as usize];
    let mut zero_yu = 0.0;
    let mut positive = 0.0;
    let mut total = 0.0;
    for x in 0..max_x {
        for yu in 0..k {
            let m = k * x + yu;
            let rho = (-((m * m) as f64) / s2).exp();
            // `m > 0` is reached with either sign; 0 only with a = 0.
            let w = if m == 0 { rho } else { 2.0 * rho };
            px[x as usize] += w;
            total += w;
            if yu == 0 {
                zero_yu += w;
            }
            if m > 0 {
                positive += rho;
            }
        }
    }
    for p in &mut px {
        *p /= total;
    }
    (px, zero_yu / total, positive / total)
}

/// Profile with the default templates and noise for `point`.
pub fn default_profile(point: LeakPoint) -> LeakProfile {
    default_profile_for(point, &SamplerParams::galactics(), DEFAULT_TRACE_LEN)
        .expect("default trace length fits every window")
}

/// Default templates for a sampler configuration and trace length (at least 64).
pub fn default_profile_for(
    point: LeakPoint,
    sampler: &SamplerParams,
    trace_len: usize,
) -> Result<LeakProfile, LeakageError> {
    if trace_len < DEFAULT_TRACE_LEN {
        return Err(LeakageError::InvalidProfile(format!(
            "trace_len {trace_len} is shorter than {DEFAULT_TRACE_LEN}"
        )));
    }
    let base = baseline(trace_len);
    let zero = vec![0.0; trace_len];
    let (px, p_zero, p_pos) = accepted_label_frequencies(sampler);
    let (templates, masked, noise_std, priors) = match point {
        LeakPoint::CdtX => {
            let t = (0..px.len())
                .map(|x| with_window(&base, CDT_BUMP, CDT_BUMP_AMP * x as f64))
                .collect();
            let m = (0..px.len())
                .map(|x| with_window(&zero, CDT_MASKED, CDT_MASKED_AMP * x as f64))
                .collect();
            (t, m, DEFAULT_NOISE_CDT_X, px)
        }
        LeakPoint::YuZero => (
            vec![base.clone(), with_window(&base, YU_BUMP, YU_BUMP_AMP)],
            vec![with_window(&zero, YU_MASKED, YU_MASKED_AMP), zero.clone()],
            DEFAULT_NOISE_YU_ZERO,
            vec![1.0 - p_zero, p_zero],
        ),
        LeakPoint::SignA => (
            vec![
                with_window(&base, SIGN_A_BUMP, -SIGN_AMP),
                with_window(&base, SIGN_A_BUMP, SIGN_AMP),
            ],
            Vec::new(),
            DEFAULT_NOISE_SIGN_A,
            vec![1.0 - p_pos, p_pos],
        ),
        LeakPoint::SignB => (
            vec![
                with_window(&base, SIGN_B_BUMP, -SIGN_AMP),
                with_window(&base, SIGN_B_BUMP, SIGN_AMP),
            ],
            Vec::new(),
            DEFAULT_NOISE_SIGN_B,
            vec![0.5, 0.5],
        ),
    };
    Ok(LeakProfile {
        point,
        trace_len,
        templates,
        masked,
        noise_std,
        priors,
        seed: 0,
    })
}

impl LeakProfile {
    pub fn classes(&self) -> usize {
        self.templates.len()
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn validate(&self) -> Result<(), LeakageError> {
        let bad = |m: String| Err(LeakageError::InvalidProfile(m));
        if self.templates.is_empty() || self.templates.len() > 256 {
            return bad("template count must be in 1..=256".into());
        }
        if self
            .templates
            .iter()
            .chain(&self.masked)
            .any(|t| t.len() != self.trace_len)
        {
            return bad("template length differs from trace_len".into());
        }
        if !self.masked.is_empty() && self.masked.len() != self.templates.len() {
            return bad("masked components must cover every label".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std {} must be finite and nonnegative",
                self.noise_std
            ));
        }
        if self.priors.len() != self.templates.len() || self.priors.iter().any(|p| !(*p >= 0.0)) {
            return bad("priors must be one nonnegative weight per label".into());
        }
        Ok(())
    }

    /// Draws a label from the priors.
    pub fn sample_label<R: RngCore + ?Sized>(&self, rng: &mut R) -> u8 {
        let total: f64 = self.priors.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, &p) in self.priors.iter().enumerate() {
            if u < p {
                return k as u8;
            }
            u -= p;
        }
        (self.priors.len() - 1) as u8
    }

    /// Class log-likelihoods of `samples` up to a shared constant.
    pub fn log_likelihoods(&self, samples: &[f32]) -> Vec<f64> {
        let s2 = self.noise_std * self.noise_std;
        (0..self.classes())
            .map(|k| {
                let t = &self.templates[k];
                let dist = |sign: f64| -> f64 {
                    samples
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let m = self.masked.get(k).map_or(0.0, |m| m[i]);
                            let e = v as f64 - t[i] - sign * m;
                            e * e
                        })
                        .sum()
                };
                let (dp, dm) = (
                    dist(1.0),
                    if self.masked.is_empty() {
                        f64::INFINITY
                    } else {
                        dist(-1.0)
                    },
                );
                if s2 == 0.0 {
                    return -dp.min(dm);
                }
                let (a, b) = (-dp / (2.0 * s2), -dm / (2.0 * s2));
                let hi = a.max(b);
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            })
            .collect()
    }

    /// Maximum-a-posteriori label under the generating model.
    pub fn bayes_label(&self, samples: &[f32]) -> u8 {
        let ll = self.log_likelihoods(samples);
        let use_priors = self.noise_std > 0.0;
        let mut best = (0u8, f64::NEG_INFINITY);
        for (k, l) in ll.into_iter().enumerate() {
            let score = if use_priors {
                l + self.priors[k].ln()
            } else {
                l
            };
            if score > best.1 {
                best = (k as u8, score);
            }
        }
        best.0
    }
}

pub fn emit_trace<R: RngCore + ?Sized>(
    profile: &LeakProfile,
    label: u8,
    rng: &mut R,
) -> Result<Trace, LeakageError> {
    let k = label as usize;
    let template = profile.templates.get(k).ok_or(LeakageError::UnknownLabel {
        label,
        classes: profile.classes(),
    })?;
    let polarity = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let masked = profile.masked.get(k);
    let samples = template
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let m = masked.map_or(0.0, |m| polarity * m[i]);
            let noise: f64 = if profile.noise_std > 0.0 {
                profile.noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (t + m + noise) as f32
        })
        .collect();
    Ok(Trace { samples, label })
}

/// Labelled traces drawn from the profile's own label distribution.
pub fn emit_random<R: RngCore + ?Sized>(
    profile: &LeakProfile,
    count: usize,
    rng: &mut R,
) -> Vec<Trace> {
    (0..count)
        .map(|_| {
            let label = profile.sample_label(rng);
            emit_trace(profile, label, rng).expect("sampled labels have templates")
        })
        .collect()
}

/// One profile per leak point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub cdt_x: LeakProfile,
    pub yu_zero: LeakProfile,
    pub sign_a: LeakProfile,
    pub sign_b: LeakProfile,
}

impl Default for ProfileSet {
    fn default() -> Self {
        Self {
            cdt_x: default_profile(LeakPoint::CdtX),
            yu_zero: default_profile(LeakPoint::YuZero),
            sign_a: default_profile(LeakPoint::SignA),
            sign_b: default_profile(LeakPoint::SignB),
        }
    }
}

impl ProfileSet {
    pub fn get(&self, point: LeakPoint) -> &LeakProfile {
        match point {
            LeakPoint::CdtX => &self.cdt_x,
            LeakPoint::YuZero => &self.yu_zero,
            LeakPoint::SignA => &self.sign_a,
            LeakPoint::SignB => &self.sign_b,
        }
    }

    pub fn get_mut(&mut self, point: LeakPoint) -> &mut LeakProfile {
        match point {
            LeakPoint::CdtX => &mut self.cdt_x,
            LeakPoint::YuZero => &mut self.yu_zero,
            LeakPoint::SignA => &mut self.sign_a,
            LeakPoint::SignB => &mut self.sign_b,
        }
    }
}

/// Traces of one signature, index-aligned with the `y1` coefficients of the
/// accepted attempt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignatureTraces {
    pub cdt_x: Vec<Trace>,
    pub yu_zero: Vec<Trace>,
    pub sign_a: Vec<Trace>,
    /// One per use of the sign-flip bit while computing `z1`.
    pub sign_b: Vec<Trace>,
}

impl SignatureTraces {
    pub fn get(&self, point: LeakPoint) -> &[Trace] {
        match point {
            LeakPoint::CdtX => &self.cdt_x,
            LeakPoint::YuZero => &self.yu_zero,
            LeakPoint::SignA => &self.sign_a,
            LeakPoint::SignB => &self.sign_b,
        }
    }
}

/// Emits the traces of the accepted attempt of a signing transcript.
pub fn emit_for_transcript<R: RngCore + ?Sized>(
    profiles: &ProfileSet,
    transcript: &SignTranscript,
    rng: &mut R,
) -> SignatureTraces {
    let acc = transcript.accepted();
    let mut out = SignatureTraces::default();
    let max_x = profiles.cdt_x.classes() - 1;
    for w in &acc.w1 {
        let x = (w.x as usize).min(max_x) as u8;
        out.cdt_x
            .push(emit_trace(&profiles.cdt_x, x, rng).expect("x is clamped to the templates"));
        let yu = w.yu_zero_leak() as u8;
        out.yu_zero
            .push(emit_trace(&profiles.yu_zero, yu, rng).expect("binary label"));
        out.sign_a
            .push(emit_trace(&profiles.sign_a, w.a, rng).expect("binary label"));
        out.sign_b
            .push(emit_trace(&profiles.sign_b, acc.b, rng).expect("binary label"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bliss::{keygen, sign, BlissParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_profiles_are_well_formed() {
        for point in LeakPoint::ALL {
            let p = default_profile(point);
            p.validate().unwrap();
            assert_eq!(LeakPoint::from_code(point.code()), Some(point));
            assert_eq!(LeakPoint::from_name(point.name()), Some(point));
        }
        let yu = default_profile(LeakPoint::YuZero);
        assert_eq!(yu.classes(), 2);
        assert!(yu.templates[1][YU_BUMP.start] > yu.templates[0][YU_BUMP.start]);
        let cdt = default_profile(LeakPoint::CdtX);
        assert_eq!(cdt.classes(), 12);
        for x in 0..cdt.classes() {
            let bump = cdt.templates[x][CDT_BUMP.start] - cdt.templates[0][CDT_BUMP.start];
            assert!((bump - CDT_BUMP_AMP * x as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn accepted_frequencies() {
        let (px, p_zero, p_pos) = accepted_label_frequencies(&SamplerParams::galactics());
        assert!((px[0] - 0.76005).abs() < 1e-4, "{}", px[0]);
        assert!((px[1] - 0.22130).abs() < 1e-4, "{}", px[1]);
        assert!((p_zero - 1.0 / 256.0).abs() < 2e-5, "{p_zero}");
        assert!((p_pos - 0.5).abs() < 1e-2);
    }

    #[test]
    fn zero_noise_traces_equal_templates_and_are_classified_exactly() {
        for point in LeakPoint::ALL {
            let p = default_profile(point).with_noise(0.0);
            let mut r = rng(1);
            for label in 0..p.classes() as u8 {
                let t = emit_trace(&p, label, &mut r).unwrap();
                if p.masked.is_empty() {
                    for (a, b) in t.samples.iter().zip(&p.templates[label as usize]) {
                        assert_eq!(*a, *b as f32);
                    }
                }
                assert_eq!(p.bayes_label(&t.samples), label, "{point} label {label}");
            }
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let p = default_profile(LeakPoint::SignA);
        assert_eq!(
            emit_trace(&p, 2, &mut rng(0)),
            Err(LeakageError::UnknownLabel {
                label: 2,
                classes: 2
            })
        );
    }

    #[test]
    fn noise_moments() {
        let p = default_profile(LeakPoint::SignA);
        let mut r = rng(2);
        let count = 100_000;
        let len = p.trace_len;
        let mut sum = vec![0.0f64; len];
        let mut sq = vec![0.0f64; len];
        for _ in 0..count {
            let t = emit_trace(&p, 1, &mut r).unwrap();
            for (i, &v) in t.samples.iter().enumerate() {
                let e = v as f64 - p.templates[1][i];
                sum[i] += v as f64;
                sq[i] += e * e;
            }
        }
        let bound = 3.0 * p.noise_std / (count as f64).sqrt();
        for i in 0..len {
            let mean = sum[i] / count as f64;
            assert!((mean - p.templates[1][i]).abs() < bound, "sample {i}");
            let std = (sq[i] / count as f64).sqrt();
            assert!((std / p.noise_std - 1.0).abs() < 0.02, "sample {i}: {std}");
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let p = default_profile(LeakPoint::CdtX);
        let a = emit_random(&p, 50, &mut rng(3));
        let b = emit_random(&p, 50, &mut rng(3));
        assert_eq!(a, b);
    }

    #[test]
    fn transcript_traces_align_with_draws() {
        let params = BlissParams::toy64();
        let mut r = rng(4);
        let keys = keygen(&params, &mut r).unwrap();
        let profiles = ProfileSet::default();
        for i in 0..5u8 {
            let (_, t) = sign(&[i], &keys, &params, &mut r).unwrap();
            let traces = emit_for_transcript(&profiles, &t, &mut r);
            let acc = t.accepted();
            for point in LeakPoint::ALL {
                assert_eq!(traces.get(point).len(), params.n());
            }
            for (k, w) in acc.w1.iter().enumerate() {
                assert_eq!(traces.cdt_x[k].label as u32, w.x);
                assert_eq!(traces.yu_zero[k].label, (w.y_u == 0) as u8);
                assert_eq!(traces.sign_a[k].label, w.a);
            }
            assert!(traces.sign_b.iter().all(|tr| tr.label == acc.b));
        }
    }
}
