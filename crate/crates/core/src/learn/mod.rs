//! Trace classifiers: feature standardization, multilayer perceptrons trained
//! by mini-batch gradient descent, evaluation metrics and majority voting.

mod codec;
mod loss;
mod net;
mod train;

use rand::seq::SliceRandom;
use rand::RngCore;
use thiserror::Error;

use crate::leakage::Trace;

pub use codec::{decode_model, encode_model, ModelCodecError, MODEL_VERSION};
pub use loss::{batch_loss, LossKind, LossSpec};
pub use net::{Activation, Layer, Network};
pub use train::{fit_and_evaluate, train, train_network, Hyper, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("loss diverged at epoch {epoch} (last finite loss {last_finite})")]
    DivergenceDetected { epoch: usize, last_finite: f64 },
    #[error("input has {actual} features, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid training setup: {0}")]
    Invalid(String),
}

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u8>) -> Self {
        assert_eq!(
            features.len(),
            dim * labels.len(),
            "features do not match labels"
        );
        Self {
            features,
            dim,
            labels,
        }
    }

    pub fn from_traces(traces: &[Trace]) -> Self {
        let dim = traces.first().map_or(0, |t| t.samples.len());
        let mut features = Vec::with_capacity(dim * traces.len());
        for t in traces {
            assert_eq!(t.samples.len(), dim, "traces differ in length");
            features.extend(t.samples.iter().map(|&v| v as f64));
        }
        Self::new(features, dim, traces.iter().map(|t| t.label).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self::new(
            features,
            self.dim,
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Per-feature mean and standard deviation of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; ds.dim];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; ds.dim];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardized copy of one row; constant columns map to zero.
    pub fn apply_row<T: Copy + Into<f64>>(&self, row: &[T], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.std)
                .map(
                    |((&v, m), s)| {
                        if *s > 0.0 {
                            (v.into() - m) / s
                        } else {
                            0.0
                        }
                    },
                ),
        );
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut features = Vec::with_capacity(ds.features.len());
        let mut buf = Vec::with_capacity(ds.dim);
        for i in 0..ds.len() {
            self.apply_row(ds.row(i), &mut buf);
            features.extend_from_slice(&buf);
        }
        Dataset::new(features, ds.dim, ds.labels.clone())
    }
}

/// Standardizes a training set and returns the statistics used.
pub fn standardize(train: &Dataset) -> (Dataset, NormStats) {
    let stats = NormStats::fit(train);
    (stats.apply(train), stats)
}

/// Transforms another set with training statistics (never refit).
pub fn apply_stats(stats: &NormStats, other: &Dataset) -> Dataset {
    stats.apply(other)
}

/// Splits by label so every part keeps the label proportions. `fractions`
/// are the train and validation shares; the rest is the test set.
pub fn stratified_split<R: RngCore + ?Sized>(
    ds: &Dataset,
    fractions: (f64, f64),
    rng: &mut R,
) -> (Dataset, Dataset, Dataset) {
    let classes = ds.max_label() as usize + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(rng);
        let n = idx.len();
        let a = (n as f64 * fractions.0).round() as usize;
        let b = ((n as f64 * (fractions.0 + fractions.1)).round() as usize).max(a);
        tr.extend_from_slice(&idx[..a]);
        va.extend_from_slice(&idx[a..b.min(n)]);
        te.extend_from_slice(&idx[b.min(n)..]);
    }
    for v in [&mut tr, &mut va, &mut te] {
        v.shuffle(rng);
    }
    (ds.subset(&tr), ds.subset(&va), ds.subset(&te))
}

/// A trained network with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub net: Network,
    pub stats: NormStats,
    /// Decision threshold on the positive-class probability (binary only).
    pub threshold: f64,
}

impl ClassifierModel {
    pub fn classes(&self) -> usize {
        self.net.classes()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Label and class probabilities of a raw trace.
    pub fn predict(&self, samples: &[f32]) -> Result<(u8, Vec<f64>), LearnError> {
        if samples.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: samples.len(),
            });
        }
        let mut x = Vec::with_capacity(samples.len());
        self.stats.apply_row(samples, &mut x);
        Ok(self.predict_standardized(&x))
    }

    fn predict_standardized(&self, x: &[f64]) -> (u8, Vec<f64>) {
        let probs = self.net.probabilities(x);
        let label = if probs.len() == 2 {
            (probs[1] >= self.threshold) as u8
        } else {
            argmax(&probs) as u8
        };
        (label, probs)
    }

    pub fn predict_batch(&self, traces: &[Trace]) -> Result<Vec<(u8, Vec<f64>)>, LearnError> {
        traces.iter().map(|t| self.predict(&t.samples)).collect()
    }

    pub fn predict_labels(&self, traces: &[Trace]) -> Result<Vec<u8>, LearnError> {
        traces
            .iter()
            .map(|t| self.predict(&t.samples).map(|p| p.0))
            .collect()
    }

    /// Metrics on a raw (unstandardized) dataset.
    pub fn evaluate(&self, ds: &Dataset) -> Result<Metrics, LearnError> {
        if ds.dim != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: ds.dim,
            });
        }
        let mut buf = Vec::with_capacity(ds.dim);
        let preds: Vec<u8> = (0..ds.len())
            .map(|i| {
                self.stats.apply_row(ds.row(i), &mut buf);
                self.predict_standardized(&buf).0
            })
            .collect();
        Ok(Metrics::from_predictions(
            &ds.labels,
            &preds,
            self.classes(),
        ))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and confusion counts; for binary tasks the rare positive class
/// is label 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub false_positive_rate: Option<f64>,
    pub false_negative_rate: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(truth: &[u8], predicted: &[u8], classes: usize) -> Self {
        assert_eq!(truth.len(), predicted.len());
        let classes = classes.max(
            truth
                .iter()
                .chain(predicted)
                .map(|&l| l as usize + 1)
                .max()
                .unwrap_or(0),
        );
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t as usize][p as usize] += 1;
        }
        let correct: u64 = (0..classes).map(|k| confusion[k][k]).sum();
        let accuracy = correct as f64 / truth.len().max(1) as f64;
        let (fpr, fnr) = if classes == 2 {
            let neg = confusion[0][0] + confusion[0][1];
            let pos = confusion[1][0] + confusion[1][1];
            (
                (neg > 0).then(|| confusion[0][1] as f64 / neg as f64),
                (pos > 0).then(|| confusion[1][0] as f64 / pos as f64),
            )
        } else {
            (None, None)
        };
        Self {
            accuracy,
            confusion,
            false_positive_rate: fpr,
            false_negative_rate: fnr,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Accuracy of always answering the most frequent true label.
    pub fn majority_baseline(&self) -> f64 {
        let best = self
            .confusion
            .iter()
            .map(|r| r.iter().sum::<u64>())
            .max()
            .unwrap_or(0);
        best as f64 / self.total().max(1) as f64
    }
}

/// Most frequent bit; an even split gives 0.
pub fn majority_vote(bits: &[u8]) -> u8 {
    let ones = bits.iter().filter(|&&b| b != 0).count();
    (2 * ones > bits.len()) as u8
}

/// Positive/negative example weights inversely proportional to the label
/// frequencies, normalized to average 1 over the set.
pub fn class_frequency_weights(ds: &Dataset, classes: usize) -> Vec<f64> {
    let counts = ds.class_counts(classes);
    let n = ds.len() as f64;
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (present * c as f64)
            }
        })
        .collect()
}
