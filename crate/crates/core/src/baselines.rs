//! Reference learners: Online Newton Step, projected online gradient descent, and an
//! accurate solver for the regularized-leader minimization.

use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::barrier::{phi_gradient, phi_hessian, slack, PotentialAccumulators, PotentialParams};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{rank_one_inverse_update, Matrix, SpdMatrixPair, Vector};
use crate::reduction::BallLearner;
use crate::sets::ConvexSet;

const SECULAR_TOL: f64 = 1e-12;
const SECULAR_MAX_ITERATIONS: usize = 400;
pub const FTRL_MAX_ITERATIONS: usize = 500;

/// Step constants of ONS on a set of diameter `diameter` with gradients bounded by `grad_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsParams {
    pub dim: usize,
    pub alpha: f64,
    pub grad_bound: f64,
    pub diameter: f64,
}

impl OnsParams {
    /// Unit ball, unit-Lipschitz losses.
    pub fn unit_ball(dim: usize, alpha: f64) -> Self {
        Self { dim, alpha, grad_bound: 1.0, diameter: 2.0 }
    }

    /// `gamma = min(1 / (4 G D), alpha) / 2`.
    pub fn gamma(&self) -> f64 {
        0.5 * (1.0 / (4.0 * self.grad_bound * self.diameter)).min(self.alpha)
    }

    /// `epsilon = 1 / (gamma D)^2`.
    pub fn epsilon(&self) -> f64 {
        1.0 / (self.gamma() * self.diameter).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("grad_bound", self.grad_bound), ("diameter", self.diameter)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `argmin_{|x| <= 1} (x - y)^T A (x - y)` from the eigendecomposition of `A`, solving the
/// secular equation `|x(mu)| = 1` for the multiplier by bisection.
pub fn mahalanobis_ball_projection(eig: &SymmetricEigen<f64, nalgebra::Dyn>, y: &Vector) -> Result<Vector> {
    if y.norm() <= 1.0 {
        return Ok(y.clone());
    }
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let z = q.transpose() * y;
    let norm_at = |mu: f64| -> f64 {
        z.iter().zip(lam.iter()).map(|(zi, li)| (li * zi / (li + mu)).powi(2)).sum::<f64>().sqrt()
    };
    let mut lo = 0.0;
    let mut hi = lam.max() * z.norm();
    let mut widen = 0;
    while norm_at(hi) > 1.0 {
        hi *= 2.0;
        widen += 1;
        if widen > 100 {
            return Err(Error::Convergence { iterations: widen, last_estimate: hi });
        }
    }
    let mut iterations = 0;
    while hi - lo > SECULAR_TOL * hi.max(1.0) {
        iterations += 1;
        if iterations > SECULAR_MAX_ITERATIONS {
            return Err(Error::Convergence { iterations, last_estimate: 0.5 * (lo + hi) });
        }
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xz = Vector::from_fn(z.len(), |i, _| lam[i] * z[i] / (lam[i] + hi));
    let mut x = q * xz;
    while x.norm() > 1.0 {
        x *= 1.0 - f64::EPSILON;
    }
    Ok(x)
}

/// Online Newton Step on the unit ball.
#[derive(Debug, Clone)]
pub struct Ons {
    params: OnsParams,
    w: Vector,
    a: SpdMatrixPair,
    round: u64,
    eigendecompositions: u64,
}

impl Ons {
    pub fn new(params: OnsParams) -> Result<Self> {
        params.validate()?;
        let a = SpdMatrixPair::scaled_identity(params.dim, params.epsilon())?;
        Ok(Self { w: Vector::zeros(params.dim), a, params, round: 0, eigendecompositions: 0 })
    }

    pub fn params(&self) -> &OnsParams {
        &self.params
    }

    pub fn iterate(&self) -> &Vector {
        &self.w
    }

    pub fn matrix(&self) -> &SpdMatrixPair {
        &self.a
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn eigendecompositions(&self) -> u64 {
        self.eigendecompositions
    }

    pub fn step(&mut self, g: &Vector) -> Result<()> {
        check_dim(self.params.dim, g.len())?;
        let a = rank_one_inverse_update(&self.a, g, 1.0)?;
        let y = &self.w - a.inverse() * g / self.params.gamma();
        let eig = SymmetricEigen::new(a.forward().clone());
        self.eigendecompositions += 1;
        self.w = mahalanobis_ball_projection(&eig, &y)?;
        self.a = a;
        self.round += 1;
        Ok(())
    }
}

impl BallLearner for Ons {
    type Info = ();

    fn dim(&self) -> usize {
        self.params.dim
    }
    fn current(&self) -> &Vector {
        &self.w
    }
    fn observe(&mut self, g: &Vector) -> Result<()> {
        self.step(g)
    }
    fn grad_bound(&self) -> f64 {
        self.params.grad_bound
    }
}

/// Projected online gradient descent with step `D / (G sqrt(t))`.
#[derive(Debug, Clone)]
pub struct Ogd {
    set: Arc<dyn ConvexSet>,
    w: Vector,
    diameter: f64,
    grad_bound: f64,
    round: u64,
}

impl Ogd {
    pub fn new(set: Arc<dyn ConvexSet>, diameter: f64, grad_bound: f64) -> Result<Self> {
        if !set.capabilities().projection {
            return Err(Error::Unsupported("gradient descent needs a projection oracle"));
        }
        if !(diameter > 0.0 && grad_bound > 0.0) {
            return Err(Error::InvalidParams("diameter and gradient bound must be positive".into()));
        }
        let w = set.project(&Vector::zeros(set.dim()))?;
        Ok(Self { set, w, diameter, grad_bound, round: 0 })
    }

    pub fn iterate(&self) -> &Vector {
        &self.w
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn step_size(&self, t: u64) -> f64 {
        self.diameter / (self.grad_bound * (t as f64).sqrt())
    }

    pub fn step(&mut self, g: &Vector) -> Result<()> {
        self.step_with(g, self.step_size(self.round + 1))
    }

    pub fn step_with(&mut self, g: &Vector, step_size: f64) -> Result<()> {
        check_dim(self.w.len(), g.len())?;
        self.w = self.set.project(&(&self.w - g * step_size))?;
        self.round += 1;
        Ok(())
    }
}

/// Minimizer of the potential by damped Newton steps, starting at the origin.
pub fn ftrl_solve(p: &PotentialParams, acc: &PotentialAccumulators, tol: f64) -> Result<Vector> {
    ftrl_solve_from(p, acc, tol, &Vector::zeros(p.dim()))
}

/// As [`ftrl_solve`] from a given interior start.
pub fn ftrl_solve_from(p: &PotentialParams, acc: &PotentialAccumulators, tol: f64, start: &Vector) -> Result<Vector> {
    check_dim(p.dim(), start.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol} must be positive")));
    }
    slack(start)?;
    let m = 1.0 / (p.eta() * p.dim() as f64).sqrt();
    let mut x = start.clone();
    let mut lambda = f64::INFINITY;
    for _ in 0..FTRL_MAX_ITERATIONS {
        let grad = phi_gradient(&x, p, acc)?;
        let hess: Matrix = phi_hessian(&x, p, acc)?;
        let chol = hess.cholesky().ok_or_else(|| Error::Degenerate("potential Hessian lost definiteness".into()))?;
        let dir = chol.solve(&grad);
        lambda = grad.dot(&dir).max(0.0).sqrt();
        if lambda < tol {
            return Ok(x);
        }
        x -= dir / (1.0 + m * lambda);
    }
    Err(Error::Convergence { iterations: FTRL_MAX_ITERATIONS, last_estimate: lambda })
}
