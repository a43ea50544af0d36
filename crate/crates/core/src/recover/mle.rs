use super::{round_and_validate, round_by_support, signature_weight, KeyCandidate, RecoverError};
use crate::bliss::{BlissParams, PublicKey, Signature};
use crate::ring::IntVector;

/// `phi(t) = -log(1 + exp(-2t / sigma^2))`, the log-probability of the
/// observed sign bit given `<w, s> = t`.
pub fn phi(t: f64, sigma: f64) -> f64 {
    let u = -2.0 * t / (sigma * sigma);
    // -softplus(u), stable for large |u|.
    if u > 0.0 {
        -(u + (-u).exp().ln_1p())
    } else {
        -u.exp().ln_1p()
    }
}

/// `phi'(t) = (2 / sigma^2) / (1 + exp(2t / sigma^2))`.
pub fn phi_prime(t: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let v = 2.0 * t / s2;
    let inv = if v > 0.0 {
        let e = (-v).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + v.exp())
    };
    2.0 / s2 * inv
}

/// Log-likelihood `L(s) = sum_k phi(<w_k, s>)` over signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct MleProblem {
    pub weights: Vec<IntVector>,
    pub sigma: f64,
}

impl MleProblem {
    /// Builds `w_k` from signatures and their (predicted) sign-flip bits.
    pub fn new(signatures: &[Signature], bits: &[u8], sigma: f64) -> Self {
        let weights = signatures
            .iter()
            .zip(bits)
            .map(|(s, &b)| signature_weight(s, b))
            .collect();
        Self { weights, sigma }
    }

    pub fn n(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    fn inner(&self, s: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(s).map(|(&a, b)| a as f64 * b).sum())
            .collect()
    }

    pub fn log_likelihood(&self, s: &[f64]) -> f64 {
        self.inner(s).into_iter().map(|t| phi(t, self.sigma)).sum()
    }

    pub fn gradient(&self, s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        for (w, t) in self.weights.iter().zip(self.inner(s)) {
            let d = phi_prime(t, self.sigma);
            for (gi, &wi) in g.iter_mut().zip(w.iter()) {
                *gi += d * wi as f64;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Iterations between rounding-and-validation checks.
    pub check_every: usize,
    /// Stop when the gradient norm falls below this times the mean `||w_k||`.
    pub gradient_tolerance: f64,
    /// Also stop when a check interval improves `L` by less than this
    /// fraction of `|L|`.
    pub stall_tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            check_every: 50,
            gradient_tolerance: 1e-8,
            stall_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub candidate: KeyCandidate,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Unrounded maximizer estimate.
    pub estimate: Vec<f64>,
}

/// Gradient ascent from the zero vector with a backtracking line search.
/// On failure the error carries the best candidate (support rounding) and
/// its per-coordinate confidences for brute-force completion.
pub fn mle_attack(
    problem: &MleProblem,
    pk: &PublicKey,
    params: &BlissParams,
    opts: &MleOptions,
) -> Result<MleReport, RecoverError> {
    let n = problem.n();
    let mut s = vec![0.0; n];
    let mut value = problem.log_likelihood(&s);
    let w_scale = problem
        .weights
        .iter()
        .map(|w| (w.dot(w) as f64).sqrt())
        .sum::<f64>()
        / problem.weights.len().max(1) as f64;
    let mut step = 1.0;
    let check = |s: &[f64]| -> Option<KeyCandidate> {
        [
            round_by_support(s, pk, params),
            round_and_validate(s, pk, params),
        ]
        .into_iter()
        .find(|c| c.is_validated())
    };
    let mut iterations = 0;
    let mut last_check = value;
    while iterations < opts.max_iterations {
        iterations += 1;
        let g = problem.gradient(&s);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() < opts.gradient_tolerance * w_scale {
            break;
        }
        // Armijo backtracking; the step grows again after each success.
        step *= 2.0;
        loop {
            let trial: Vec<f64> = s.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            let v = problem.log_likelihood(&trial);
            if v >= value + 0.5 * step * g2 || step < 1e-300 {
                s = trial;
                value = v;
                break;
            }
            step *= 0.5;
        }
        if iterations % opts.check_every == 0 {
            let stalled = value - last_check <= opts.stall_tolerance * value.abs();
            last_check = value;
            if let Some(c) = check(&s) {
                return Ok(MleReport {
                    candidate: c,
                    iterations,
                    log_likelihood: value,
                    estimate: s,
                });
            }
            if stalled {
                break;
            }
        }
    }
    if let Some(c) = check(&s) {
        return Ok(MleReport {
            candidate: c,
            iterations,
            log_likelihood: value,
            estimate: s,
        });
    }
    Err(RecoverError::NotConverged {
        iterations,
        best: Box::new(round_by_support(&s, pk, params)),
    })
}
