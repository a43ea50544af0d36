use super::net::{sigmoid, Gradients, Network};
use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Binary cross-entropy split into false-positive, false-negative,
    /// true-positive and true-negative parts with separate weights.
    WeightedFourTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub fp_weight: f64,
    pub fn_weight: f64,
    pub tp_weight: f64,
    pub tn_weight: f64,
    /// Per-label example weights; empty means all 1.
    pub class_weights: Vec<f64>,
    /// Initial output biases; `None` keeps zeros.
    pub output_bias: Option<Vec<f64>>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            fp_weight: 1000.0,
            fn_weight: 1.0,
            tp_weight: 1.0,
            tn_weight: 1.0,
            class_weights: Vec::new(),
            output_bias: None,
        }
    }
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        Self::default()
    }

    pub fn four_term() -> Self {
        Self {
            kind: LossKind::WeightedFourTerm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = [
            self.fp_weight,
            self.fn_weight,
            self.tp_weight,
            self.tn_weight,
        ];
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err("bucket weights must be positive".into());
        }
        if self
            .class_weights
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err("class weights must be nonnegative".into());
        }
        Ok(())
    }

    fn class_weight(&self, label: u8) -> f64 {
        self.class_weights
            .get(label as usize)
            .copied()
            .unwrap_or(1.0)
    }

    /// Loss of one example and its derivative w.r.t. the logits.
    pub fn example(&self, logits: &[f64], label: u8, dlogits: &mut Vec<f64>) -> f64 {
        let cw = self.class_weight(label);
        dlogits.clear();
        if logits.len() == 1 {
            let z = logits[0];
            let p = sigmoid(z);
            // -log p = softplus(-z), -log(1-p) = softplus(z).
            let (bce, dbce) = if label == 1 {
                (softplus(-z), p - 1.0)
            } else {
                (softplus(z), p)
            };
            let (loss, d) = match self.kind {
                LossKind::CrossEntropy => (bce, dbce),
                LossKind::WeightedFourTerm => {
                    // Soft bucket membership: the predicted probability of
                    // answering "positive" decides between FP/TN or TP/FN.
                    let (w_pos, w_neg) = if label == 1 {
                        (self.tp_weight, self.fn_weight)
                    } else {
                        (self.fp_weight, self.tn_weight)
                    };
                    let omega = w_neg + (w_pos - w_neg) * p;
                    let domega = (w_pos - w_neg) * p * (1.0 - p);
                    (omega * bce, domega * bce + omega * dbce)
                }
            };
            dlogits.push(cw * d);
            return cw * loss;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
        let lse = m + sum.ln();
        for (k, &z) in logits.iter().enumerate() {
            let p = (z - lse).exp();
            dlogits.push(cw * (p - if k == label as usize { 1.0 } else { 0.0 }));
        }
        cw * (lse - logits[label as usize])
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean loss over `rows` of a standardized set; adds the mean gradient to
/// `grads` when given.
pub fn batch_loss(
    net: &Network,
    ds: &Dataset,
    rows: &[usize],
    spec: &LossSpec,
    mut grads: Option<&mut Gradients>,
) -> f64 {
    let scale = 1.0 / rows.len().max(1) as f64;
    let mut total = 0.0;
    let mut dl = Vec::new();
    for &i in rows {
        let acts = net.forward_all(ds.row(i));
        let loss = spec.example(acts.last().unwrap(), ds.labels[i], &mut dl);
        total += loss;
        if let Some(g) = grads.as_deref_mut() {
            for d in &mut dl {
                *d *= scale;
            }
            net.backward(&acts, &dl, g);
        }
    }
    total * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::net::Network;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn spec_loss(spec: &LossSpec, z: f64, label: u8) -> f64 {
        spec.example(&[z], label, &mut Vec::new())
    }

    #[test]
    fn four_term_limits() {
        let spec = LossSpec::four_term();
        assert!(spec_loss(&spec, 20.0, 1) + spec_loss(&spec, -20.0, 0) < 1e-3);
        let fp = spec_loss(&spec, 20.0, 0);
        let fneg = spec_loss(&spec, -20.0, 1);
        assert!((fp / fneg / 1000.0 - 1.0).abs() < 1e-3, "{}", fp / fneg);
    }

    #[test]
    fn logit_derivatives_match_finite_differences() {
        let mut r = ChaCha20Rng::seed_from_u64(5);
        let specs = [
            LossSpec::cross_entropy(),
            LossSpec::four_term(),
            LossSpec {
                class_weights: vec![0.5, 64.0],
                ..LossSpec::four_term()
            },
        ];
        for spec in &specs {
            for _ in 0..200 {
                let z: f64 = r.random_range(-6.0..6.0);
                let label = r.random_range(0..2u8);
                let mut d = Vec::new();
                spec.example(&[z], label, &mut d);
                let h = 1e-5;
                let fd =
                    (spec_loss(spec, z + h, label) - spec_loss(spec, z - h, label)) / (2.0 * h);
                assert!(
                    (d[0] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "{z} {label}: {} vs {fd}",
                    d[0]
                );
            }
        }
    }

    fn check_network_gradient(classes: usize, hidden: &[usize], spec: &LossSpec, seed: u64) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let dim = 6;
        let mut net = Network::new(dim, hidden, classes, &mut r);
        for l in &mut net.layers {
            for b in &mut l.b {
                *b = r.random_range(-0.5..0.5);
            }
        }
        let rows = 16;
        let features = (0..rows * dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let labels = (0..rows)
            .map(|_| r.random_range(0..classes as u8))
            .collect();
        let ds = Dataset::new(features, dim, labels);
        let idx: Vec<usize> = (0..rows).collect();
        let mut g = net.zero_gradients();
        batch_loss(&net, &ds, &idx, spec, Some(&mut g));
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for li in 0..net.layers.len() {
            for which in 0..2 {
                let len = if which == 0 {
                    net.layers[li].w.len()
                } else {
                    net.layers[li].b.len()
                };
                for j in 0..len {
                    // Fourth-order central difference: the weighted loss reaches
                    // values near 10^3, so a small step would drown in roundoff.
                    let at = |delta: f64| {
                        let mut m = net.clone();
                        if which == 0 {
                            m.layers[li].w[j] += delta;
                        } else {
                            m.layers[li].b[j] += delta;
                        }
                        batch_loss(&m, &ds, &idx, spec, None)
                    };
                    let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                    let an = if which == 0 { g[li].0[j] } else { g[li].1[j] };
                    let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-4);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-5, "relative gradient error {worst}");
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        check_network_gradient(2, &[5, 4], &LossSpec::cross_entropy(), 1);
        check_network_gradient(2, &[5, 4, 3], &LossSpec::four_term(), 2);
        check_network_gradient(4, &[7], &LossSpec::cross_entropy(), 3);
        check_network_gradient(3, &[], &LossSpec::cross_entropy(), 4);
        check_network_gradient(
            2,
            &[4],
            &LossSpec {
                class_weights: vec![0.5, 30.0],
                ..LossSpec::four_term()
            },
            5,
        );
    }
}
