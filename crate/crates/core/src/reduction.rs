//! Running a ball learner over an arbitrary convex set.
//!
//! Each round the wrapper turns the inner iterate `w` into a feasible point `u`, and turns
//! the loss subgradient `zeta` at `u` into a linear loss `g` for the inner learner, so that
//! `<zeta, u - v> <= <g, w - v>` for every `v` in the set.

use std::sync::Arc;

use crate::bounds::reduction_gradient_budget;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Vector;
use crate::oqns::{Oqns, StepInfo};
use crate::sets::ConvexSet;

pub const DEFAULT_GAUGE_TOLERANCE: f64 = 1e-10;
const GAUGE_MAX_ITERATIONS: usize = 200;
const GAUGE_MAX_WIDENINGS: usize = 64;

/// A learner whose iterates live in the open unit ball and which consumes linear losses.
pub trait BallLearner {
    /// Per-step telemetry returned by [`BallLearner::observe`].
    type Info;

    fn dim(&self) -> usize;
    fn current(&self) -> &Vector;
    fn observe(&mut self, g: &Vector) -> Result<Self::Info>;
    fn grad_bound(&self) -> f64;
}

impl BallLearner for Oqns {
    type Info = StepInfo;

    fn dim(&self) -> usize {
        Oqns::dim(self)
    }
    fn current(&self) -> &Vector {
        self.iterate()
    }
    fn observe(&mut self, g: &Vector) -> Result<StepInfo> {
        self.step(g)
    }
    fn grad_bound(&self) -> f64 {
        self.params().potential.grad_bound()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReductionMode {
    /// Distance to the set measured in the Euclidean norm; needs projection.
    EuclideanDistance,
    /// Distance measured through the gauge; needs a symmetric set with membership and
    /// separation oracles.
    GaugeDistance { tolerance: f64 },
}

impl ReductionMode {
    pub fn gauge() -> Self {
        ReductionMode::GaugeDistance { tolerance: DEFAULT_GAUGE_TOLERANCE }
    }

    pub fn is_gauge(&self) -> bool {
        matches!(self, ReductionMode::GaugeDistance { .. })
    }

    /// Bound on the norm of the gradients fed to the inner learner.
    pub fn gradient_budget(&self, dim: usize) -> f64 {
        reduction_gradient_budget(dim, self.is_gauge())
    }
}

/// `inf { lambda >= 0 : w in lambda C }` by bisection on the membership oracle.
///
/// Assumes `B(1/sqrt(d)) ⊆ C ⊆ B(1)` so the gauge lies in `[|w|, sqrt(d) |w|]`. Returns the
/// upper end of the final bracket, so `w / result` is always a member.
pub fn gauge_value(set: &dyn ConvexSet, w: &Vector, tol: f64) -> Result<f64> {
    check_dim(set.dim(), w.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("gauge tolerance {tol} must be positive")));
    }
    let n = w.norm();
    if n == 0.0 {
        return Ok(0.0);
    }
    let mut lo = n;
    if set.contains(&(w / lo)) {
        return Ok(lo);
    }
    let mut hi = (set.dim() as f64).sqrt() * n;
    let mut widenings = 0;
    while !set.contains(&(w / hi)) {
        lo = hi;
        hi *= 2.0;
        widenings += 1;
        if widenings > GAUGE_MAX_WIDENINGS {
            return Err(Error::OracleInconsistency(format!(
                "no member found along ray of {w:?} up to scale 1/{hi}"
            )));
        }
    }
    for _ in 0..GAUGE_MAX_ITERATIONS {
        if hi - lo <= tol * lo.max(1.0) {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if set.contains(&(w / mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::OracleInconsistency(format!(
        "gauge bisection did not close: bracket [{lo}, {hi}]"
    )))
}

/// A subgradient `nu` of the distance from `w` to the set.
pub fn distance_subgradient(w: &Vector, mode: ReductionMode, set: &dyn ConvexSet) -> Result<Vector> {
    check_dim(set.dim(), w.len())?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("non-finite point".into()));
    }
    match mode {
        ReductionMode::EuclideanDistance => {
            let p = set.project(w)?;
            let r = w - p;
            let dist = r.norm();
            Ok(if dist > 0.0 { r / dist } else { Vector::zeros(w.len()) })
        }
        ReductionMode::GaugeDistance { tolerance } => {
            let gauge = gauge_value(set, w, tolerance)?;
            if gauge <= 1.0 {
                return Ok(Vector::zeros(w.len()));
            }
            let b = w / gauge;
            let probe = &b * (1.0 + 10.0 * tolerance);
            let sep = set.separate(&probe).ok_or_else(|| {
                Error::OracleInconsistency(format!("no separator returned at exterior point {probe:?}"))
            })?;
            let s_dot_b = sep.normal.dot(&b);
            if s_dot_b <= 1e-12 {
                return Err(Error::DegenerateSeparator(s_dot_b));
            }
            Ok(sep.normal / s_dot_b)
        }
    }
}

/// Returns `(u, gauge_score)` with `gauge_score = <nu, w>`; shrinks `w` onto the boundary
/// when the score is at least 1.
pub fn play_point(w: &Vector, nu: &Vector) -> (Vector, f64) {
    let score = nu.dot(w);
    if score >= 1.0 {
        (w / score, score)
    } else {
        (w.clone(), score)
    }
}

/// `zeta - 1{<zeta, w> < 0} <zeta, u> nu`.
pub fn transformed_gradient(zeta: &Vector, w: &Vector, u: &Vector, nu: &Vector) -> Vector {
    if zeta.dot(w) < 0.0 {
        zeta - nu * zeta.dot(u)
    } else {
        zeta.clone()
    }
}

/// Linear loss for the Euclidean-distance mode: removes the component of `zeta` that
/// points back toward the set along the outward normal `nu`.
pub fn euclidean_transformed_gradient(zeta: &Vector, nu: &Vector) -> Vector {
    let along = zeta.dot(nu);
    if along < 0.0 {
        zeta - nu * along
    } else {
        zeta.clone()
    }
}

/// Telemetry for one wrapped round.
#[derive(Debug, Clone)]
pub struct WrapperRound<I> {
    /// Inner iterate `w_t`.
    pub inner_point: Vector,
    /// Played point `u_t`.
    pub played: Vector,
    pub nu: Vector,
    /// `<nu, w_t>` in gauge mode.
    pub gauge_score: Option<f64>,
    pub zeta: Vector,
    pub g: Vector,
    pub grad_norm: f64,
    pub within_budget: bool,
    pub inner: I,
}

/// Wraps a ball learner so that it plays inside `set`.
#[derive(Debug)]
pub struct Wrapper<L> {
    inner: L,
    mode: ReductionMode,
    set: Arc<dyn ConvexSet>,
    last_played: Option<Vector>,
    last_gauge_score: Option<f64>,
}

impl<L: BallLearner> Wrapper<L> {
    pub fn new(inner: L, set: Arc<dyn ConvexSet>, mode: ReductionMode) -> Result<Self> {
        check_dim(set.dim(), inner.dim())?;
        let caps = set.capabilities();
        match mode {
            ReductionMode::EuclideanDistance => {
                if !caps.projection {
                    return Err(Error::Unsupported("euclidean reduction needs a projection oracle"));
                }
            }
            ReductionMode::GaugeDistance { tolerance } => {
                if !(tolerance > 0.0) {
                    return Err(Error::InvalidParams("gauge tolerance must be positive".into()));
                }
                if !(caps.membership && caps.separation) {
                    return Err(Error::Unsupported("gauge reduction needs membership and separation oracles"));
                }
                if !set.is_symmetric() {
                    return Err(Error::Unsupported("gauge reduction needs a centrally symmetric set"));
                }
            }
        }
        let budget = mode.gradient_budget(set.dim());
        if inner.grad_bound() < budget {
            return Err(Error::InvalidParams(format!(
                "inner learner accepts gradients up to {} but the reduction may emit up to {budget}",
                inner.grad_bound()
            )));
        }
        Ok(Self { inner, mode, set, last_played: None, last_gauge_score: None })
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    pub fn mode(&self) -> ReductionMode {
        self.mode
    }

    pub fn set(&self) -> &Arc<dyn ConvexSet> {
        &self.set
    }

    pub fn last_played(&self) -> Option<&Vector> {
        self.last_played.as_ref()
    }

    pub fn last_gauge_score(&self) -> Option<f64> {
        self.last_gauge_score
    }

    /// The point the next round would play, with the subgradient used to obtain it.
    pub fn next_point(&self) -> Result<(Vector, Vector, Option<f64>)> {
        let w = self.inner.current();
        let nu = distance_subgradient(w, self.mode, self.set.as_ref())?;
        Ok(match self.mode {
            ReductionMode::EuclideanDistance => (self.set.project(w)?, nu, None),
            ReductionMode::GaugeDistance { .. } => {
                let (u, score) = play_point(w, &nu);
                (u, nu, Some(score))
            }
        })
    }

    /// Plays one round. `subgradient_at(u)` must return a loss subgradient of norm at most 1.
    pub fn round<F>(&mut self, subgradient_at: F) -> Result<WrapperRound<L::Info>>
    where
        F: FnOnce(&Vector) -> Result<Vector>,
    {
        let w = self.inner.current().clone();
        let (u, nu, gauge_score) = self.next_point()?;
        let zeta = subgradient_at(&u)?;
        check_dim(w.len(), zeta.len())?;
        let zn = zeta.norm();
        if zn > 1.0 + 1e-12 {
            return Err(Error::AssumptionViolation(format!("loss subgradient norm {zn} exceeds 1")));
        }
        let g = match self.mode {
            ReductionMode::EuclideanDistance => euclidean_transformed_gradient(&zeta, &nu),
            ReductionMode::GaugeDistance { .. } => transformed_gradient(&zeta, &w, &u, &nu),
        };
        let grad_norm = g.norm();
        let within_budget = grad_norm <= self.mode.gradient_budget(w.len()) + 1e-9;
        let inner = self.inner.observe(&g)?;
        self.last_played = Some(u.clone());
        self.last_gauge_score = gauge_score;
        Ok(WrapperRound { inner_point: w, played: u, nu, gauge_score, zeta, g, grad_norm, within_budget, inner })
    }
}
