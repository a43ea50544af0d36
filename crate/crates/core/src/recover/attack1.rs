use nalgebra::{DMatrix, DVector};

use super::{
    round_and_validate, round_by_support, EquationSystem, KeyCandidate, RecoverError,
    SignaturePrediction,
};
use crate::bliss::{BlissParams, PublicKey, Signature};
use crate::ring::rotation_row;

/// One equation `<rotation_row(c_k, i), s1> = (-1)^b (z_i - (-1)^a K x)`
/// for every coefficient predicted to have `y_u = 0`.
pub fn collect_equations_attack1(
    predictions: &[SignaturePrediction],
    signatures: &[Signature],
    k: i64,
) -> EquationSystem {
    let n = signatures.first().map_or(0, |s| s.z1.len());
    let mut sys = EquationSystem::new(n);
    for (sig_idx, (pred, sig)) in predictions.iter().zip(signatures).enumerate() {
        let sign_b = 1 - 2 * pred.b as i64;
        for (i, d) in pred.draws.iter().enumerate() {
            if !d.yu_zero {
                continue;
            }
            let sign_a = 1 - 2 * d.a as i64;
            let y = sign_a * k * d.x as i64;
            let rhs = sign_b * (sig.z1.coeffs()[i] - y);
            sys.push(rotation_row(&sig.c, i), rhs, (sig_idx, i), d.confidence);
        }
    }
    sys
}

/// Least-squares solution of `M s = r` through the singular value
/// decomposition; the minimum-norm solution when `M` is rank deficient.
pub fn solve_least_squares(sys: &EquationSystem) -> Vec<f64> {
    let m = sys.len();
    let n = sys.n;
    if m == 0 {
        return vec![0.0; n];
    }
    let a = DMatrix::from_fn(m, n, |i, j| sys.rows[i][j] as f64);
    let b = DVector::from_iterator(m, sys.rhs.iter().map(|&v| v as f64));
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * (m.max(n) as f64) * f64::EPSILON;
    let x = svd.solve(&b, tol).expect("singular vectors were computed");
    x.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attack1Options {
    /// Re-solves allowed after the first attempt.
    pub retry_budget: usize,
    /// Drop equations whose right-hand side cannot be reached by any key.
    pub bound_filter: bool,
}

impl Default for Attack1Options {
    fn default() -> Self {
        Self {
            retry_budget: 50,
            bound_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attack1Report {
    pub candidate: KeyCandidate,
    pub equations_collected: usize,
    pub equations_filtered: usize,
    pub equations_used: usize,
    pub retries: usize,
    /// Residual norm of the last solve.
    pub residual: f64,
}

/// Solves, rounds and validates; while the candidate is invalid, drops the
/// equation with the largest residual and tries again.
pub fn attack1(
    mut sys: EquationSystem,
    pk: &PublicKey,
    params: &BlissParams,
    opts: &Attack1Options,
) -> Result<Attack1Report, RecoverError> {
    let collected = sys.len();
    if opts.bound_filter {
        // |<rotation_row(c, i), s1>| <= kappa * max|s1_j| for every key.
        let s_max = if params.d2 > 0 { 2 } else { 1 };
        let bound = (params.kappa as i64) * s_max;
        let rhs = sys.rhs.clone();
        sys.retain(|i| rhs[i].abs() <= bound);
    }
    let filtered = collected - sys.len();
    let mut residual = f64::NAN;
    for retry in 0..=opts.retry_budget {
        if sys.is_empty() {
            break;
        }
        let est = solve_least_squares(&sys);
        let res: Vec<f64> = sys
            .rows
            .iter()
            .zip(&sys.rhs)
            .map(|(r, &b)| r.iter().zip(&est).map(|(&a, x)| a as f64 * x).sum::<f64>() - b as f64)
            .collect();
        residual = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        for cand in [
            round_and_validate(&est, pk, params),
            round_by_support(&est, pk, params),
        ] {
            if cand.is_validated() {
                return Ok(Attack1Report {
                    candidate: cand,
                    equations_collected: collected,
                    equations_filtered: filtered,
                    equations_used: sys.len(),
                    retries: retry,
                    residual,
                });
            }
        }
        let worst = (0..res.len())
            .max_by(|&a, &b| res[a].abs().total_cmp(&res[b].abs()))
            .expect("system is not empty");
        sys.retain(|i| i != worst);
    }
    Err(RecoverError::RecoveryFailed(format!(
        "no valid key from {collected} equations ({filtered} out of bounds) after {} retries, residual {residual:.3}",
        opts.retry_budget
    )))
}
