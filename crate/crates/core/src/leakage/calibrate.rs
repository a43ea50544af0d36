use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::{emit_random, LeakProfile};
use crate::learn::{train, Dataset, Hyper, LearnError, LossSpec, Metrics};

/// Classifier used to score a noise level.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierKind {
    /// Maximum-a-posteriori decision under the generating model.
    Bayes,
    /// Softmax regression trained on standardized samples.
    Linear,
    /// Perceptron with the given hidden widths.
    Mlp(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub train_size: usize,
    pub eval_size: usize,
    /// Accepted distance between measured and target accuracy.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Search interval for the noise standard deviation.
    pub noise_range: (f64, f64),
    pub hyper: Hyper,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            train_size: 50_000,
            eval_size: 100_000,
            tolerance: 0.005,
            max_iterations: 30,
            noise_range: (1e-3, 20.0),
            hyper: Hyper {
                max_epochs: 30,
                patience: 5,
                ..Hyper::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("accuracy {target} is outside the reachable band [{low}, {high}]")]
    Unreachable { target: f64, low: f64, high: f64 },
    #[error("no noise level within tolerance after {iterations} steps (closest {closest})")]
    NotConverged { iterations: usize, closest: f64 },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Held-out accuracy of `kind` on traces of `profile`. Seeds are fixed by
/// `opts.seed`, so repeated calls at different noise levels share their
/// random streams.
pub fn measure_accuracy(
    profile: &LeakProfile,
    kind: &ClassifierKind,
    opts: &CalibrationOptions,
) -> Result<Metrics, LearnError> {
    let mut eval_rng = ChaCha20Rng::seed_from_u64(opts.seed ^ 0xe7a1);
    let eval = emit_random(profile, opts.eval_size, &mut eval_rng);
    let truth: Vec<u8> = eval.iter().map(|t| t.label).collect();
    let classes = profile.classes();
    let predicted = match kind {
        ClassifierKind::Bayes => eval
            .iter()
            .map(|t| profile.bayes_label(&t.samples))
            .collect(),
        ClassifierKind::Linear | ClassifierKind::Mlp(_) => {
            let hidden = match kind {
                ClassifierKind::Mlp(h) => h.clone(),
                _ => Vec::new(),
            };
            let mut rng = ChaCha20Rng::seed_from_u64(opts.seed ^ 0x7a1);
            let tr = Dataset::from_traces(&emit_random(profile, opts.train_size, &mut rng));
            let va = Dataset::from_traces(&emit_random(profile, opts.train_size / 5, &mut rng));
            let hyper = Hyper {
                hidden,
                seed: opts.seed,
                ..opts.hyper.clone()
            };
            let (model, _) = train(&tr, &va, classes, &LossSpec::cross_entropy(), &hyper)?;
            model.predict_labels(&eval)?
        }
    };
    Ok(Metrics::from_predictions(&truth, &predicted, classes))
}

/// Bisects the noise level (on a log scale) until `kind` reaches
/// `target_accuracy` within the tolerance.
pub fn calibrate_noise(
    profile: &LeakProfile,
    target_accuracy: f64,
    kind: &ClassifierKind,
    opts: &CalibrationOptions,
) -> Result<LeakProfile, CalibrationError> {
    let acc = |noise: f64| -> Result<f64, LearnError> {
        Ok(measure_accuracy(&profile.clone().with_noise(noise), kind, opts)?.accuracy)
    };
    let (mut lo, mut hi) = opts.noise_range;
    let (acc_lo, acc_hi) = (acc(lo)?, acc(hi)?);
    if !(0.5 < target_accuracy && target_accuracy < 1.0)
        || target_accuracy > acc_lo + opts.tolerance
        || target_accuracy < acc_hi - opts.tolerance
    {
        return Err(CalibrationError::Unreachable {
            target: target_accuracy,
            low: acc_hi,
            high: acc_lo,
        });
    }
    let mut closest = (f64::INFINITY, lo);
    for _ in 0..opts.max_iterations {
        let mid = (lo * hi).sqrt();
        let a = acc(mid)?;
        if (a - target_accuracy).abs() < closest.0 {
            closest = ((a - target_accuracy).abs(), mid);
        }
        if (a - target_accuracy).abs() <= opts.tolerance {
            return Ok(profile.clone().with_noise(mid));
        }
        if a > target_accuracy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(CalibrationError::NotConverged {
        iterations: opts.max_iterations,
        closest: closest.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::{default_profile, LeakPoint};

    #[test]
    fn bayes_accuracy_falls_with_noise() {
        let opts = CalibrationOptions {
            eval_size: 20_000,
            ..CalibrationOptions::default()
        };
        let p = default_profile(LeakPoint::CdtX);
        let accs: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&s| {
                measure_accuracy(&p.clone().with_noise(s), &ClassifierKind::Bayes, &opts)
                    .unwrap()
                    .accuracy
            })
            .collect();
        assert!(accs.windows(2).all(|w| w[0] > w[1]), "{accs:?}");
    }

    #[test]
    fn calibration_hits_target_for_sign_bit() {
        let opts = CalibrationOptions {
            eval_size: 100_000,
            tolerance: 0.0005,
            ..CalibrationOptions::default()
        };
        let p = default_profile(LeakPoint::SignA);
        let c = calibrate_noise(&p, 0.999, &ClassifierKind::Bayes, &opts).unwrap();
        let acc = measure_accuracy(&c, &ClassifierKind::Bayes, &opts)
            .unwrap()
            .accuracy;
        assert!((acc - 0.999).abs() <= 0.0005, "{acc}");
        assert!(matches!(
            calibrate_noise(&p, 0.3, &ClassifierKind::Bayes, &opts),
            Err(CalibrationError::Unreachable { .. })
        ));
    }
}
