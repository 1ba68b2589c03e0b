//! Closed-form right-hand sides of the guarantees checked by the test suites and by
//! `verify-bounds`. Each function is a direct transcription of its inequality.

/// `ln(d + B^2 T / d)`, the logarithm appearing in most bounds.
pub fn log_term(dim: usize, grad_bound: f64, horizon: u64) -> f64 {
    let d = dim as f64;
    (d + grad_bound * grad_bound * horizon as f64 / d).ln()
}

/// Upper bound on the number of landmark refreshes after `horizon` rounds:
/// `8 sqrt(2 T ln(d + B^2 T/d) / (c^2 eta beta))`.
pub fn landmark_count_bound(dim: usize, grad_bound: f64, eta: f64, beta: f64, c: f64, horizon: u64) -> f64 {
    let t = horizon as f64;
    8.0 * (2.0 * t * log_term(dim, grad_bound, horizon) / (c * c * eta * beta)).sqrt()
}

/// Operator-norm error of the truncated inverse-Hessian series: `c^m / (2 eta d (1 - c))`.
pub fn taylor_error_bound(dim: usize, eta: f64, c: f64, order: usize) -> f64 {
    c.powi(order as i32) / (2.0 * eta * dim as f64 * (1.0 - c))
}

/// `-eta d ln(1 - |w|^2) + (d + eta B^2)/2 |w|^2`, the comparator-dependent part shared
/// by the surrogate-regret bounds.
pub fn comparator_penalty(dim: usize, eta: f64, grad_bound: f64, comparator_norm_sq: f64) -> f64 {
    let d = dim as f64;
    -eta * d * (1.0 - comparator_norm_sq).ln() + 0.5 * (d + eta * grad_bound * grad_bound) * comparator_norm_sq
}

/// Surrogate regret of the quasi-Newton learner against comparator `w`:
/// `Psi(w) + (d + eta B^2)/2 |w|^2 + (3d + B sqrt(d)) ln(d + B^2 T/d) / beta`.
pub fn surrogate_regret_bound(
    dim: usize,
    eta: f64,
    beta: f64,
    grad_bound: f64,
    horizon: u64,
    comparator_norm_sq: f64,
) -> f64 {
    let d = dim as f64;
    comparator_penalty(dim, eta, grad_bound, comparator_norm_sq)
        + (3.0 * d + grad_bound * d.sqrt()) * log_term(dim, grad_bound, horizon) / beta
}

/// Surrogate regret of exact FTRL against comparator `w`:
/// `Psi(w) + (d + eta B^2)/2 |w|^2 + (2d/beta + 32 sqrt(d)/(3 eta^2)) ln(d + B^2 T/d)`.
pub fn ftrl_regret_bound(
    dim: usize,
    eta: f64,
    beta: f64,
    grad_bound: f64,
    horizon: u64,
    comparator_norm_sq: f64,
) -> f64 {
    let d = dim as f64;
    comparator_penalty(dim, eta, grad_bound, comparator_norm_sq)
        + (2.0 * d / beta + 32.0 * d.sqrt() / (3.0 * eta * eta)) * log_term(dim, grad_bound, horizon)
}

/// Summed local-norm distance between the learner and FTRL:
/// `1 + 16 sqrt(d) / (3 beta sqrt(eta)) ln(d + B^2 T/d)`.
pub fn ftrl_proximity_bound(dim: usize, eta: f64, beta: f64, grad_bound: f64, horizon: u64) -> f64 {
    let d = dim as f64;
    1.0 + 16.0 * d.sqrt() / (3.0 * beta * eta.sqrt()) * log_term(dim, grad_bound, horizon)
}

/// Bound on the FTRL barrier scale at round `t`: `2(2 eta d + B^2 eta + (B + 2 beta B^2)(t - 1))`.
pub fn ftrl_barrier_scale_bound(dim: usize, eta: f64, beta: f64, grad_bound: f64, round: u64) -> f64 {
    let d = dim as f64;
    let b = grad_bound;
    2.0 * (2.0 * eta * d + b * b * eta + (b + 2.0 * beta * b * b) * (round.saturating_sub(1)) as f64)
}

/// Norm budget for the gradients the reduction feeds its inner learner.
pub fn reduction_gradient_budget(dim: usize, gauge_mode: bool) -> f64 {
    if gauge_mode {
        1.0 + (dim as f64).sqrt()
    } else {
        1.0
    }
}
