//! The regularized potential
//!
//! ```text
//! Phi_t(x) = -eta d ln(1 - |x|^2) + (d + eta B^2)/2 |x|^2
//!            + beta/2 sum_{s<t} <g_s, x - w_s>^2 + <x, sum_{s<t} g_s>
//! ```
//!
//! together with its gradient, Hessian and Newton decrement. The sums over past rounds
//! are carried by [`PotentialAccumulators`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{full_inverse_spd, metric_norm, Matrix, Vector};

/// Smallest admissible `1 - |x|^2`.
pub const DOMAIN_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    dim: usize,
    eta: f64,
    beta: f64,
    grad_bound: f64,
}

impl PotentialParams {
    pub fn new(dim: usize, eta: f64, beta: f64, grad_bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        if !(eta >= 1.0) || !eta.is_finite() {
            return Err(Error::InvalidParams(format!("eta must be >= 1, got {eta}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParams(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(grad_bound > 0.0) || !grad_bound.is_finite() {
            return Err(Error::InvalidParams(format!(
                "gradient bound must be positive, got {grad_bound}"
            )));
        }
        Ok(Self { dim, eta, beta, grad_bound })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    /// `eta * d`, the barrier weight.
    pub fn barrier_weight(&self) -> f64 {
        self.eta * self.dim as f64
    }

    /// `d + eta B^2`, the weight of the isotropic quadratic.
    pub fn quadratic_weight(&self) -> f64 {
        self.dim as f64 + self.eta * self.grad_bound * self.grad_bound
    }

    /// Whether the parameters fall in the range where the regret and interiority
    /// guarantees are stated (`eta >= 11`, `beta <= 1/8`).
    pub fn in_guarantee_regime(&self) -> bool {
        self.eta >= 11.0 && self.beta <= 0.125
    }
}

/// Running sums of the observed gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialAccumulators {
    /// `sum g_s`
    pub grad_sum: Vector,
    /// `sum g_s g_s^T w_s`
    pub weighted_sum: Vector,
    /// `sum g_s g_s^T`
    pub outer_sum: Matrix,
    /// `sum <g_s, w_s>^2`; only enters the potential's value.
    pub offset_sq_sum: f64,
    pub round: u64,
}

impl PotentialAccumulators {
    pub fn new(dim: usize) -> Self {
        Self {
            grad_sum: Vector::zeros(dim),
            weighted_sum: Vector::zeros(dim),
            outer_sum: Matrix::zeros(dim, dim),
            offset_sq_sum: 0.0,
            round: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.grad_sum.len()
    }

    /// Records gradient `g` observed at iterate `w`.
    pub fn observe(&mut self, g: &Vector, w: &Vector) -> Result<()> {
        check_dim(self.dim(), g.len())?;
        check_dim(self.dim(), w.len())?;
        let gw = g.dot(w);
        self.grad_sum += g;
        self.weighted_sum.axpy(gw, g, 1.0);
        self.outer_sum.ger(1.0, g, g, 1.0);
        self.offset_sq_sum += gw * gw;
        self.round += 1;
        Ok(())
    }
}

/// Returns `1 - |x|^2`, or a domain error when it falls below [`DOMAIN_MARGIN`].
pub fn slack(x: &Vector) -> Result<f64> {
    let s = 1.0 - x.norm_squared();
    if s < DOMAIN_MARGIN || !s.is_finite() {
        return Err(Error::Domain { norm: x.norm() });
    }
    Ok(s)
}

fn check(x: &Vector, p: &PotentialParams, acc: Option<&PotentialAccumulators>) -> Result<f64> {
    check_dim(p.dim, x.len())?;
    if let Some(acc) = acc {
        check_dim(p.dim, acc.dim())?;
    }
    slack(x)
}

/// `-eta d ln(1 - |x|^2)`.
pub fn barrier_value(x: &Vector, p: &PotentialParams) -> Result<f64> {
    let s = check(x, p, None)?;
    Ok(-p.barrier_weight() * s.ln())
}

/// Hessian of the barrier alone.
pub fn barrier_hessian(x: &Vector, p: &PotentialParams) -> Result<Matrix> {
    let s = check(x, p, None)?;
    let d = p.dim;
    let k = p.barrier_weight();
    let mut h = Matrix::identity(d, d) * (2.0 * k / s);
    h.ger(4.0 * k / (s * s), x, x, 1.0);
    Ok(h)
}

/// `Phi(x)` for the potential described by `acc`.
pub fn phi_value(x: &Vector, p: &PotentialParams, acc: &PotentialAccumulators) -> Result<f64> {
    let s = check(x, p, Some(acc))?;
    let quad = x.dot(&(&acc.outer_sum * x)) - 2.0 * x.dot(&acc.weighted_sum) + acc.offset_sq_sum;
    Ok(-p.barrier_weight() * s.ln()
        + 0.5 * p.quadratic_weight() * x.norm_squared()
        + 0.5 * p.beta * quad
        + x.dot(&acc.grad_sum))
}

/// `grad Phi(x) = 2 eta d x/(1-|x|^2) + (d + eta B^2) x + beta (V x - S) + G`.
pub fn phi_gradient(x: &Vector, p: &PotentialParams, acc: &PotentialAccumulators) -> Result<Vector> {
    let s = check(x, p, Some(acc))?;
    let mut g = x * (2.0 * p.barrier_weight() / s + p.quadratic_weight());
    g += (&acc.outer_sum * x - &acc.weighted_sum) * p.beta;
    g += &acc.grad_sum;
    Ok(g)
}

/// `hess Phi(x) = 2 eta d I/(1-|x|^2) + 4 eta d x x^T/(1-|x|^2)^2 + (d + eta B^2) I + beta V`.
pub fn phi_hessian(x: &Vector, p: &PotentialParams, acc: &PotentialAccumulators) -> Result<Matrix> {
    check(x, p, Some(acc))?;
    let d = p.dim;
    let mut h = barrier_hessian(x, p)?;
    h += Matrix::identity(d, d) * p.quadratic_weight();
    h += &acc.outer_sum * p.beta;
    Ok(h)
}

/// `|grad Phi(x)|` in the inverse-Hessian metric, computed with a fresh dense inverse.
pub fn newton_decrement(x: &Vector, p: &PotentialParams, acc: &PotentialAccumulators) -> Result<f64> {
    let g = phi_gradient(x, p, acc)?;
    let hinv = full_inverse_spd(&phi_hessian(x, p, acc)?)?;
    metric_norm(&g, &hinv)
}
