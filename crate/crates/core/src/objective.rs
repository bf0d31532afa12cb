//! Binomial negative log-likelihood, gradient, and curvature shared by all
//! solvers.
//!
//! The loss is the scaled (divided by n) negative log-likelihood of the
//! logistic model h(x) = 1/(1+exp(-eta)). Per row the loss is
//! softplus(eta) - y*eta, which is the overflow-safe log-sum-exp form; it
//! never produces -inf for finite eta. Under perfect separation the per-row
//! loss on the wrong side is capped at -ln(1e-12), the cap that a
//! probability floor of 1e-12 would impose, so that held-out deviances stay
//! finite. The gradient is exact and uncapped.

use crate::error::{Error, Result};
use crate::sparse::SparseColMatrix;

/// Probability floor used by the loss cap.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-row loss cap: -ln(PROB_FLOOR).
pub fn loss_cap() -> f64 {
    -PROB_FLOOR.ln()
}

/// Stable softplus: log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(beta: &[f64], intercept: f64) -> Result<()> {
    if !intercept.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric(
            "non-finite coefficients passed to objective".into(),
        ));
    }
    Ok(())
}

/// Linear predictor eta = intercept + X beta.
pub fn linear_predictor(x: &SparseColMatrix, intercept: f64, beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![0.0; x.nrows()];
    x.mul_vec(beta, &mut eta);
    for e in eta.iter_mut() {
        *e += intercept;
    }
    eta
}

/// Scaled NLL from a precomputed linear predictor.
pub fn nll_from_eta(eta: &[f64], y: &[f64]) -> f64 {
    assert_eq!(eta.len(), y.len());
    let cap = loss_cap();
    let n = eta.len() as f64;
    let mut total = 0.0;
    for (&e, &yi) in eta.iter().zip(y) {
        let loss = softplus(e) - yi * e;
        total += loss.min(cap);
    }
    total / n
}

/// Scaled NLL: -(1/n) Σ [y log h + (1-y) log(1-h)].
pub fn nll(x: &SparseColMatrix, intercept: f64, beta: &[f64], y: &[f64]) -> Result<f64> {
    check_finite(beta, intercept)?;
    let eta = linear_predictor(x, intercept, beta);
    Ok(nll_from_eta(&eta, y))
}

/// Gradient of the scaled NLL: ((1/n) Σ (h - y), (1/n) Xᵀ(h - y)).
/// Returns (intercept_gradient, coefficient_gradient).
pub fn gradient(
    x: &SparseColMatrix,
    intercept: f64,
    beta: &[f64],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_finite(beta, intercept)?;
    let eta = linear_predictor(x, intercept, beta);
    Ok(gradient_from_eta(x, &eta, y))
}

/// Gradient from a precomputed linear predictor. Exact sparse accumulation.
pub fn gradient_from_eta(x: &SparseColMatrix, eta: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = eta.len() as f64;
    let resid: Vec<f64> = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| sigmoid(e) - yi)
        .collect();
    let g0 = resid.iter().sum::<f64>() / n;
    let mut g = vec![0.0; x.ncols()];
    x.tr_mul_vec(&resid, 1.0 / n, &mut g);
    (g0, g)
}

/// Fitted probabilities for a linear predictor.
pub fn probabilities(eta: &[f64]) -> Vec<f64> {
    eta.iter().map(|&e| sigmoid(e)).collect()
}

/// IRLS curvature weights h(1-h) per row.
pub fn curvature_weights(eta: &[f64]) -> Vec<f64> {
    eta.iter()
        .map(|&e| {
            let h = sigmoid(e);
            h * (1.0 - h)
        })
        .collect()
}

/// Held-out binomial deviance per row: -2 [y log h + (1-y) log(1-h)],
/// with the same loss cap as `nll`. Returns the mean over rows.
pub fn mean_deviance(eta: &[f64], y: &[f64]) -> f64 {
    2.0 * nll_from_eta(eta, y)
}
