use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::loss::{batch_loss, LossSpec};
use super::net::Network;
use super::{standardize, stratified_split, ClassifierModel, Dataset, LearnError, Metrics};

/// Optimizer and architecture settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    /// Hidden layer widths; empty gives a linear model.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Gradient norm cap per step; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Trains on a standardized set with early stopping on `val`; returns the
/// network from the epoch with the lowest validation loss.
pub fn train_network(
    train: &Dataset,
    val: &Dataset,
    classes: usize,
    loss: &LossSpec,
    hyper: &Hyper,
) -> Result<(Network, TrainReport), LearnError> {
    loss.validate().map_err(LearnError::Invalid)?;
    if train.is_empty() {
        return Err(LearnError::Invalid("empty training set".into()));
    }
    if hyper.batch_size == 0 {
        return Err(LearnError::Invalid("batch size must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);
    let mut net = Network::new(train.dim, &hyper.hidden, classes, &mut rng);
    if let Some(bias) = &loss.output_bias {
        let out = net.layers.last_mut().unwrap();
        if bias.len() != out.b.len() {
            return Err(LearnError::Invalid(
                "output bias has the wrong width".into(),
            ));
        }
        out.b.clone_from(bias);
    }
    let mut velocity = net.zero_gradients();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_rows: Vec<usize> = (0..val.len()).collect();
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, net.clone());
    let mut stale = 0;
    let mut last_finite = f64::NAN;
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut g = net.zero_gradients();
            let l = batch_loss(&net, train, batch, loss, Some(&mut g));
            if !l.is_finite() {
                return Err(LearnError::DivergenceDetected { epoch, last_finite });
            }
            last_finite = l;
            epoch_loss += l * batch.len() as f64;
            let norm: f64 = g
                .iter()
                .flat_map(|(w, b)| w.iter().chain(b))
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let clip = if hyper.grad_clip > 0.0 && norm > hyper.grad_clip {
                hyper.grad_clip / norm
            } else {
                1.0
            };
            for ((layer, (gw, gb)), (vw, vb)) in net.layers.iter_mut().zip(&g).zip(&mut velocity) {
                for ((p, gi), vi) in layer.w.iter_mut().zip(gw).zip(vw.iter_mut()) {
                    *vi = hyper.momentum * *vi - hyper.learning_rate * clip * gi;
                    *p += *vi;
                }
                for ((p, gi), vi) in layer.b.iter_mut().zip(gb).zip(vb.iter_mut()) {
                    *vi = hyper.momentum * *vi - hyper.learning_rate * clip * gi;
                    *p += *vi;
                }
            }
        }
        report.train_loss.push(epoch_loss / train.len() as f64);
        let vl = if val.is_empty() {
            report.train_loss[epoch]
        } else {
            batch_loss(&net, val, &val_rows, loss, None)
        };
        if !vl.is_finite() {
            return Err(LearnError::DivergenceDetected { epoch, last_finite });
        }
        report.val_loss.push(vl);
        if vl < best.0 {
            best = (vl, net.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    Ok((best.1, report))
}

/// Standardizes a raw training set, trains, and wraps the result with its
/// normalization statistics. `val` is raw and transformed with the
/// training statistics.
pub fn train(
    train_raw: &Dataset,
    val_raw: &Dataset,
    classes: usize,
    loss: &LossSpec,
    hyper: &Hyper,
) -> Result<(ClassifierModel, TrainReport), LearnError> {
    let (train_std, stats) = standardize(train_raw);
    let val_std = stats.apply(val_raw);
    let (net, report) = train_network(&train_std, &val_std, classes, loss, hyper)?;
    Ok((
        ClassifierModel {
            net,
            stats,
            threshold: 0.5,
        },
        report,
    ))
}

/// Split 70/15/15 by label, train, and evaluate on the held-out part.
pub fn fit_and_evaluate(
    ds: &Dataset,
    classes: usize,
    loss: &LossSpec,
    hyper: &Hyper,
) -> Result<(ClassifierModel, TrainReport, Metrics), LearnError> {
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed ^ 0x5eed_0001);
    let (tr, va, te) = stratified_split(ds, (0.7, 0.15), &mut rng);
    let (model, report) = train(&tr, &va, classes, loss, hyper)?;
    let metrics = model.evaluate(&te)?;
    Ok((model, report, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u8;
            let center = if c == 1 { 4.0 } else { -4.0 };
            f.push(center + r.random_range(-1.0..1.0));
            f.push(r.random_range(-1.0..1.0));
            l.push(c);
        }
        Dataset::new(f, 2, l)
    }

    fn xor(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let a: f64 = r.random_range(-1.0..1.0);
            let b: f64 = r.random_range(-1.0..1.0);
            f.push(a);
            f.push(b);
            l.push(((a > 0.0) != (b > 0.0)) as u8);
        }
        Dataset::new(f, 2, l)
    }

    #[test]
    fn separable_blobs_are_learned_exactly() {
        let ds = blobs(2000, 1);
        let hyper = Hyper {
            hidden: vec![],
            max_epochs: 20,
            ..Hyper::default()
        };
        let (_, _, m) = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &hyper).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn xor_needs_a_hidden_layer() {
        let ds = xor(4000, 2);
        let linear = Hyper {
            hidden: vec![],
            max_epochs: 30,
            ..Hyper::default()
        };
        let mlp = Hyper {
            hidden: vec![16],
            learning_rate: 0.05,
            max_epochs: 200,
            patience: 20,
            ..Hyper::default()
        };
        let (_, _, ml) = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &linear).unwrap();
        let (_, _, mm) = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &mlp).unwrap();
        assert!(ml.accuracy <= 0.6, "linear {}", ml.accuracy);
        assert!(mm.accuracy >= 0.95, "mlp {}", mm.accuracy);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = xor(500, 3);
        let hyper = Hyper {
            hidden: vec![8],
            max_epochs: 5,
            ..Hyper::default()
        };
        let a = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &hyper).unwrap();
        let b = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &hyper).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn predictions_are_probabilities_and_batch_consistent() {
        let ds = xor(300, 4);
        let hyper = Hyper {
            hidden: vec![8],
            max_epochs: 3,
            ..Hyper::default()
        };
        let (model, _, _) = fit_and_evaluate(&ds, 2, &LossSpec::cross_entropy(), &hyper).unwrap();
        let traces: Vec<crate::leakage::Trace> = (0..ds.len())
            .map(|i| crate::leakage::Trace {
                samples: ds.row(i).iter().map(|&v| v as f32).collect(),
                label: ds.labels[i],
            })
            .collect();
        let batch = model.predict_batch(&traces).unwrap();
        for (t, b) in traces.iter().zip(&batch) {
            let single = model.predict(&t.samples).unwrap();
            assert_eq!(&single, b);
            assert!(single.1.iter().all(|&p| p >= 0.0));
            assert!((single.1.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(matches!(
            model.predict(&[0.0; 3]),
            Err(LearnError::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }
}
