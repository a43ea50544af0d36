use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense layer; `w` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    fn he<R: RngCore + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let scale = (2.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            act,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let z = dot(row, x) + self.b[o];
            out.push(match self.act {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            });
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler pipeline the loop.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Feed-forward network. Binary tasks use one output logit, others one
/// logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Parameter-shaped gradient buffers, one `(w, b)` pair per layer.
pub type Gradients = Vec<(Vec<f64>, Vec<f64>)>;

impl Network {
    pub fn new<R: RngCore + ?Sized>(
        input: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Self {
        assert!(classes >= 2, "need at least two classes");
        let out = if classes == 2 { 1 } else { classes };
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer::he(prev, h, Activation::Relu, rng));
            prev = h;
        }
        let mut last = Layer::he(prev, out, Activation::Identity, rng);
        // Smaller output weights keep initial logits near the bias.
        for w in &mut last.w {
            *w *= 0.5;
        }
        layers.push(last);
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn classes(&self) -> usize {
        match self.output_dim() {
            1 => 2,
            k => k,
        }
    }

    /// Checks that layer dimensions chain and the output layer is linear.
    pub fn validate(&self) -> Result<(), String> {
        if self.layers.is_empty() {
            return Err("network has no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.in_dim * l.out_dim
                || l.b.len() != l.out_dim
                || l.in_dim == 0
                || l.out_dim == 0
            {
                return Err(format!("layer {i} has inconsistent shapes"));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(format!("layer {i} does not chain"));
            }
        }
        if self.layers.last().unwrap().act != Activation::Identity {
            return Err("output layer must be linear".into());
        }
        if self.output_dim() == 2 {
            return Err("binary networks use a single output".into());
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        logits_to_probabilities(&self.logits(x))
    }

    /// Activations of every layer, input first.
    pub(crate) fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.out_dim);
            l.forward(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Adds the gradient of the loss w.r.t. all parameters, given the
    /// gradient `dout` w.r.t. the logits, into `grads`.
    pub(crate) fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grads: &mut Gradients) {
        let mut delta = dout.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = &mut grads[li];
            for o in 0..l.out_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; l.in_dim];
            for o in 0..l.out_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &l.w[o * l.in_dim..(o + 1) * l.in_dim];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // Hidden layers are ReLU; its derivative is the indicator of a
            // positive output.
            for (p, &a) in prev.iter_mut().zip(&acts[li]) {
                if self.layers[li - 1].act == Activation::Relu && a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logits_to_probabilities(logits: &[f64]) -> Vec<f64> {
    if logits.len() == 1 {
        let p = sigmoid(logits[0]);
        return vec![1.0 - p, p];
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
