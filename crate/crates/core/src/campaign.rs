//! Profiling on a clone device, observing a victim, and running the key
//! recovery attacks on what the classifiers read from the victim's traces.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::bliss::{
    keygen, BlissError, BlissParams, KeyPair, PublicKey, SignOptions, Signature, Signer,
};
use crate::leakage::{emit_trace, LeakPoint, ProfileSet, SignatureTraces, Trace};
use crate::learn::{
    class_frequency_weights, majority_vote, stratified_split, train, ClassifierModel, Dataset,
    Hyper, LearnError, LossSpec, TrainReport,
};
use crate::recover::{
    attack1, brute_force_completion, collect_equations_attack1, collect_equations_attack2,
    kernel_attack, least_confident, mle_attack, Attack1Options, DrawPrediction, KernelOptions,
    MleOptions, MleProblem, RecoverError, SignaturePrediction,
};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Bliss(#[from] BlissError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("classifier for {point} expects {expected} samples, traces have {actual}")]
    TraceLength {
        point: LeakPoint,
        expected: usize,
        actual: usize,
    },
}

/// How one leak point's classifier is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    /// Profiling traces collected (85% train, 15% validation).
    pub traces: usize,
    pub hyper: Hyper,
    pub loss: LossSpec,
    /// Weight examples inversely to their label frequency.
    pub balance_classes: bool,
    /// Start the output bias at the log-odds of the positive label.
    pub prior_bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilingOptions {
    pub cdt_x: TrainingPlan,
    pub yu_zero: TrainingPlan,
    pub sign_a: TrainingPlan,
    pub sign_b: TrainingPlan,
    /// Signatures made with each fresh profiling key.
    pub signatures_per_key: usize,
    pub seed: u64,
}

impl Default for ProfilingOptions {
    fn default() -> Self {
        let sign = TrainingPlan {
            traces: 40_000,
            hyper: Hyper {
                hidden: vec![32],
                max_epochs: 30,
                patience: 5,
                ..Hyper::default()
            },
            loss: LossSpec::cross_entropy(),
            balance_classes: false,
            prior_bias: false,
        };
        Self {
            cdt_x: TrainingPlan {
                traces: 100_000,
                hyper: Hyper {
                    hidden: vec![64],
                    max_epochs: 30,
                    patience: 5,
                    ..Hyper::default()
                },
                ..sign.clone()
            },
            yu_zero: TrainingPlan {
                traces: 240_000,
                hyper: Hyper {
                    hidden: vec![64, 64, 64],
                    learning_rate: 0.001,
                    max_epochs: 40,
                    patience: 8,
                    ..Hyper::default()
                },
                loss: LossSpec::four_term(),
                balance_classes: true,
                prior_bias: true,
            },
            sign_a: sign.clone(),
            sign_b: sign,
            signatures_per_key: 25,
            seed: 1,
        }
    }
}

impl ProfilingOptions {
    pub fn plan(&self, point: LeakPoint) -> &TrainingPlan {
        match point {
            LeakPoint::CdtX => &self.cdt_x,
            LeakPoint::YuZero => &self.yu_zero,
            LeakPoint::SignA => &self.sign_a,
            LeakPoint::SignB => &self.sign_b,
        }
    }

    pub fn plan_mut(&mut self, point: LeakPoint) -> &mut TrainingPlan {
        match point {
            LeakPoint::CdtX => &mut self.cdt_x,
            LeakPoint::YuZero => &mut self.yu_zero,
            LeakPoint::SignA => &mut self.sign_a,
            LeakPoint::SignB => &mut self.sign_b,
        }
    }
}

/// One trained model per leak point.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifiers {
    pub cdt_x: ClassifierModel,
    pub yu_zero: ClassifierModel,
    pub sign_a: ClassifierModel,
    pub sign_b: ClassifierModel,
}

impl Classifiers {
    pub fn get(&self, point: LeakPoint) -> &ClassifierModel {
        match point {
            LeakPoint::CdtX => &self.cdt_x,
            LeakPoint::YuZero => &self.yu_zero,
            LeakPoint::SignA => &self.sign_a,
            LeakPoint::SignB => &self.sign_b,
        }
    }

    fn check(&self, profiles: &ProfileSet) -> Result<(), CampaignError> {
        for point in LeakPoint::ALL {
            let expected = self.get(point).input_dim();
            let actual = profiles.get(point).trace_len;
            if expected != actual {
                return Err(CampaignError::TraceLength {
                    point,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

fn message<R: RngCore + ?Sized>(rng: &mut R) -> [u8; 32] {
    let mut m = [0u8; 32];
    rng.fill_bytes(&mut m);
    m
}

/// Labelled traces from signing with fresh random keys on the profiling
/// device until every point has its quota.
pub fn collect_profiling_traces<R: RngCore + ?Sized>(
    params: &BlissParams,
    profiles: &ProfileSet,
    opts: &ProfilingOptions,
    rng: &mut R,
) -> Result<SignatureTraces, CampaignError> {
    let signer = Signer::new(params.clone(), SignOptions::default())?;
    let mut pools = SignatureTraces::default();
    let full = |pools: &SignatureTraces, p: LeakPoint| pools.get(p).len() >= opts.plan(p).traces;
    let max_x = profiles.cdt_x.classes() - 1;
    let mut keys = keygen(params, rng)?;
    let mut signed = 0usize;
    while !LeakPoint::ALL.iter().all(|&p| full(&pools, p)) {
        if signed > 0 && signed.is_multiple_of(opts.signatures_per_key.max(1)) {
            keys = keygen(params, rng)?;
        }
        let (_, t) = signer.sign(&message(rng), &keys, rng)?;
        signed += 1;
        let acc = t.accepted();
        for w in &acc.w1 {
            let labels = [
                (LeakPoint::CdtX, (w.x as usize).min(max_x) as u8),
                (LeakPoint::YuZero, w.yu_zero_leak() as u8),
                (LeakPoint::SignA, w.a),
                (LeakPoint::SignB, acc.b),
            ];
            for (point, label) in labels {
                if !full(&pools, point) {
                    let trace = emit_trace(profiles.get(point), label, rng)
                        .expect("labels within templates");
                    pool_mut(&mut pools, point).push(trace);
                }
            }
        }
    }
    Ok(pools)
}

fn pool_mut(pools: &mut SignatureTraces, point: LeakPoint) -> &mut Vec<Trace> {
    match point {
        LeakPoint::CdtX => &mut pools.cdt_x,
        LeakPoint::YuZero => &mut pools.yu_zero,
        LeakPoint::SignA => &mut pools.sign_a,
        LeakPoint::SignB => &mut pools.sign_b,
    }
}

/// Trains one classifier from labelled traces following `plan`.
pub fn train_point(
    traces: &[Trace],
    classes: usize,
    plan: &TrainingPlan,
) -> Result<(ClassifierModel, TrainReport), LearnError> {
    let ds = Dataset::from_traces(traces);
    let mut rng = ChaCha20Rng::seed_from_u64(plan.hyper.seed ^ 0x5eed_0002);
    let (tr, va, _) = stratified_split(&ds, (0.85, 0.15), &mut rng);
    let mut loss = plan.loss.clone();
    if plan.balance_classes {
        loss.class_weights = class_frequency_weights(&tr, classes);
    }
    if plan.prior_bias && classes == 2 {
        let counts = tr.class_counts(2);
        let p = (counts[1] as f64 + 0.5) / (tr.len() as f64 + 1.0);
        loss.output_bias = Some(vec![(p / (1.0 - p)).ln()]);
    }
    train(&tr, &va, classes, &loss, &plan.hyper)
}

/// Profiling draws from its own ChaCha stream, so its keys and traces
/// never coincide with a victim key made from the same seed value.
pub fn profiling_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Collects profiling traces and trains all four classifiers.
pub fn profile_device(
    params: &BlissParams,
    profiles: &ProfileSet,
    opts: &ProfilingOptions,
) -> Result<(Classifiers, Vec<(LeakPoint, TrainReport)>), CampaignError> {
    let pools = collect_profiling_traces(params, profiles, opts, &mut profiling_rng(opts.seed))?;
    train_classifiers(&pools, profiles, opts)
}

/// Trains the four classifiers from collected profiling traces.
pub fn train_classifiers(
    pools: &SignatureTraces,
    profiles: &ProfileSet,
    opts: &ProfilingOptions,
) -> Result<(Classifiers, Vec<(LeakPoint, TrainReport)>), CampaignError> {
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for point in LeakPoint::ALL {
        let (m, r) = train_point(
            pools.get(point),
            profiles.get(point).classes(),
            opts.plan(point),
        )?;
        models.push(m);
        reports.push((point, r));
    }
    let mut it = models.into_iter();
    let mut next = || it.next().expect("one model per point");
    let classifiers = Classifiers {
        cdt_x: next(),
        yu_zero: next(),
        sign_a: next(),
        sign_b: next(),
    };
    Ok((classifiers, reports))
}

/// Which predictions an observation needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObserveOptions {
    /// Predict `y_u = 0` per draw, plus `x` and `a` where it is flagged.
    pub draws: bool,
    /// Predict the sign-flip bit by majority over its uses.
    pub sign_flip: bool,
    /// Shares of the masked sampler on the victim; `None` signs unmasked.
    pub masking_shares: Option<usize>,
}

impl ObserveOptions {
    pub fn for_attack(attack: AttackKind) -> Self {
        Self {
            draws: attack != AttackKind::Likelihood,
            sign_flip: attack != AttackKind::Kernel,
            masking_shares: None,
        }
    }
}

/// What the attacker holds after one signature: the public signature and
/// the classifier predictions. `truth` holds the transcript labels and is
/// only used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub signature: Signature,
    pub predicted: SignaturePrediction,
    pub truth: SignaturePrediction,
}

fn labelled_prediction(model: &ClassifierModel, trace: &Trace) -> Result<(u8, f64), LearnError> {
    let (label, probs) = model.predict(&trace.samples)?;
    Ok((label, probs[label as usize]))
}

/// Signs `count` random messages on the victim device, emits the traces of
/// each signature and keeps only the predictions; traces are dropped as
/// soon as they are classified.
pub fn observe_victim<R: RngCore + ?Sized>(
    params: &BlissParams,
    victim: &KeyPair,
    profiles: &ProfileSet,
    classifiers: &Classifiers,
    count: usize,
    opts: ObserveOptions,
    rng: &mut R,
) -> Result<Vec<Observation>, CampaignError> {
    classifiers.check(profiles)?;
    let signer = Signer::new(
        params.clone(),
        SignOptions {
            masking_shares: opts.masking_shares,
        },
    )?;
    let max_x = profiles.cdt_x.classes() - 1;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (signature, t) = signer.sign(&message(rng), victim, rng)?;
        let truth = SignaturePrediction::oracle(&t);
        let acc = t.accepted();
        let mut draws = Vec::with_capacity(acc.w1.len());
        let mut b_votes = Vec::new();
        for w in &acc.w1 {
            let mut d = DrawPrediction {
                yu_zero: false,
                x: 0,
                a: 0,
                confidence: 1.0,
            };
            if opts.draws {
                let yu = emit_trace(&profiles.yu_zero, w.yu_zero_leak() as u8, rng)
                    .expect("binary label");
                let (label, p) = labelled_prediction(&classifiers.yu_zero, &yu)?;
                d.yu_zero = label == 1;
                d.confidence = p;
                if d.yu_zero {
                    let x_label = (w.x as usize).min(max_x) as u8;
                    let xt = emit_trace(&profiles.cdt_x, x_label, rng).expect("x is clamped");
                    let (x, px) = labelled_prediction(&classifiers.cdt_x, &xt)?;
                    let at = emit_trace(&profiles.sign_a, w.a, rng).expect("binary label");
                    let (a, pa) = labelled_prediction(&classifiers.sign_a, &at)?;
                    d.x = x as u32;
                    d.a = a;
                    d.confidence *= px * pa;
                }
            }
            if opts.sign_flip {
                let bt = emit_trace(&profiles.sign_b, acc.b, rng).expect("binary label");
                b_votes.push(classifiers.sign_b.predict(&bt.samples)?.0);
            }
            draws.push(d);
        }
        let b = if opts.sign_flip {
            majority_vote(&b_votes)
        } else {
            0
        };
        out.push(Observation {
            signature,
            predicted: SignaturePrediction { b, draws },
            truth,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Least squares over exact equations from `y_u = 0` draws.
    LeastSquares,
    /// Kernel of challenge rotations where `z` is a multiple of `K`.
    Kernel,
    /// Likelihood ascent on the sign-flip bits.
    Likelihood,
}

impl AttackKind {
    pub fn number(self) -> u8 {
        match self {
            AttackKind::LeastSquares => 1,
            AttackKind::Kernel => 2,
            AttackKind::Likelihood => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(AttackKind::LeastSquares),
            2 => Some(AttackKind::Kernel),
            3 => Some(AttackKind::Likelihood),
            _ => None,
        }
    }
}

/// Attack settings and budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub attack1: Attack1Options,
    pub kernel: KernelOptions,
    pub mle: MleOptions,
    /// Coordinates handed to brute force after likelihood ascent.
    pub brute_force_coordinates: usize,
    pub brute_force_budget: u64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            attack1: Attack1Options::default(),
            kernel: KernelOptions::default(),
            mle: MleOptions::default(),
            brute_force_coordinates: 12,
            brute_force_budget: 1 << 22,
        }
    }
}

/// Outcome of one attack run. `recovered` is set only for a candidate that
/// validated against the public key.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub attack: AttackKind,
    pub signatures: usize,
    pub recovered: Option<Vec<i64>>,
    /// `name=value` facts for the report, in a stable order.
    pub facts: Vec<(String, String)>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl AttackOutcome {
    pub fn success(&self) -> bool {
        self.recovered.is_some()
    }
}

/// Runs one attack on public data and predictions only.
pub fn run_attack<R: RngCore + ?Sized>(
    attack: AttackKind,
    params: &BlissParams,
    pk: &PublicKey,
    observations: &[Observation],
    opts: &AttackOptions,
    rng: &mut R,
) -> AttackOutcome {
    let start = Instant::now();
    let sigs: Vec<Signature> = observations.iter().map(|o| o.signature.clone()).collect();
    let preds: Vec<SignaturePrediction> =
        observations.iter().map(|o| o.predicted.clone()).collect();
    let k = params.k();
    let mut facts = Vec::new();
    let mut fact = |name: &str, value: String| facts.push((name.to_string(), value));
    let result: Result<Vec<i64>, RecoverError> = match attack {
        AttackKind::LeastSquares => {
            let sys = collect_equations_attack1(&preds, &sigs, k);
            match attack1(sys, pk, params, &opts.attack1) {
                Ok(r) => {
                    fact("equations_collected", r.equations_collected.to_string());
                    fact("equations_filtered", r.equations_filtered.to_string());
                    fact("equations_used", r.equations_used.to_string());
                    fact("retries", r.retries.to_string());
                    fact("residual", format!("{:.6}", r.residual));
                    Ok(r.candidate.s1)
                }
                Err(e) => Err(e),
            }
        }
        AttackKind::Kernel => {
            let flags: Vec<Vec<bool>> = preds
                .iter()
                .map(|p| p.draws.iter().map(|d| d.yu_zero).collect())
                .collect();
            let sys = collect_equations_attack2(&flags, &sigs, k);
            fact("rows_available", sys.len().to_string());
            match kernel_attack(&sys, pk, params, rng, &opts.kernel) {
                Ok(r) => {
                    fact("subsets_tried", r.subsets_tried.to_string());
                    fact("rows_used", r.rows_used.to_string());
                    fact("nullity", r.nullity.to_string());
                    fact("kernel_candidates", r.candidates_tried.to_string());
                    Ok(r.candidate.s1)
                }
                Err(e) => Err(e),
            }
        }
        AttackKind::Likelihood => {
            let bits: Vec<u8> = preds.iter().map(|p| p.b).collect();
            let problem = MleProblem::new(&sigs, &bits, params.sigma());
            match mle_attack(&problem, pk, params, &opts.mle) {
                Ok(r) => {
                    fact("iterations", r.iterations.to_string());
                    fact("log_likelihood", format!("{:.6}", r.log_likelihood));
                    fact("brute_force_candidates", "0".into());
                    Ok(r.candidate.s1)
                }
                Err(RecoverError::NotConverged { iterations, best }) => {
                    fact("iterations", iterations.to_string());
                    let flagged = least_confident(&best, opts.brute_force_coordinates);
                    match brute_force_completion(
                        &best,
                        &flagged,
                        pk,
                        params,
                        opts.brute_force_budget,
                    ) {
                        Ok((c, tried)) => {
                            fact("brute_force_candidates", tried.to_string());
                            Ok(c.s1)
                        }
                        Err(e) => Err(e),
                    }
                }
                Err(e) => Err(e),
            }
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(s1) => AttackOutcome {
            attack,
            signatures: observations.len(),
            recovered: Some(s1),
            facts,
            seconds,
            error: None,
        },
        Err(e) => AttackOutcome {
            attack,
            signatures: observations.len(),
            recovered: None,
            facts,
            seconds,
            error: Some(e.to_string()),
        },
    }
}

/// Prediction quality of a set of observations against their transcripts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationScore {
    pub draws: u64,
    pub yu_true_positive: u64,
    pub yu_false_positive: u64,
    pub yu_false_negative: u64,
    /// Among correctly flagged draws.
    pub x_errors: u64,
    pub a_errors: u64,
    pub b_errors: u64,
}

/// Scores the predictions `opts` asked for.
pub fn score_observations(observations: &[Observation], opts: ObserveOptions) -> ObservationScore {
    let mut s = ObservationScore::default();
    for o in observations {
        if opts.sign_flip && o.predicted.b != o.truth.b {
            s.b_errors += 1;
        }
        if !opts.draws {
            continue;
        }
        for (p, t) in o.predicted.draws.iter().zip(&o.truth.draws) {
            s.draws += 1;
            match (p.yu_zero, t.yu_zero) {
                (true, true) => {
                    s.yu_true_positive += 1;
                    if p.x != t.x {
                        s.x_errors += 1;
                    }
                    if p.a != t.a {
                        s.a_errors += 1;
                    }
                }
                (true, false) => s.yu_false_positive += 1,
                (false, true) => s.yu_false_negative += 1,
                (false, false) => {}
            }
        }
    }
    s
}

/// Victim key from stream 0 of its seed.
pub fn victim_key(params: &BlissParams, seed: u64) -> Result<KeyPair, CampaignError> {
    Ok(keygen(params, &mut ChaCha20Rng::seed_from_u64(seed))?)
}
