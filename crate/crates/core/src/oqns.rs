//! Online quasi-Newton steps over the open unit ball.
//!
//! Each round costs `O(m d^2)`: the inverse of the barrier-free part of the Hessian is
//! kept up to date with Sherman-Morrison, the rank-one barrier curvature at the current
//! iterate is folded in with a second update, and the remaining isotropic mismatch
//! between the landmark and the iterate is corrected with a truncated Neumann series.
//! A dense inversion happens only when the iterate's squared norm drifts too far from
//! the landmark's.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::barrier::{phi_gradient, phi_hessian, slack, PotentialAccumulators, PotentialParams};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    full_inverse_spd, rank_one_inverse_update, spectral_norm, Matrix, SpdMatrixPair, Vector,
};

/// Default ceiling on the automatically chosen Taylor order.
pub const DEFAULT_MAX_TAYLOR_ORDER: usize = 200;

/// Relative slack allowed on `|g| <= B` to absorb rounding in callers that build
/// gradients of norm exactly `B`.
const GRAD_BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaylorOrder {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OqnsParams {
    pub potential: PotentialParams,
    /// Landmark threshold `c` in `(0, 1)`.
    pub landmark_threshold: f64,
    pub taylor_order: TaylorOrder,
    /// Horizon `T`; only used by [`TaylorOrder::Auto`].
    pub horizon: u64,
    pub max_taylor_order: usize,
    /// Compare the maintained inverse against a dense inversion every this many rounds
    /// (0 disables sampling).
    pub shadow_every: u64,
    /// Also compare at every landmark refresh, before the maintained inverse is replaced.
    pub shadow_at_refresh: bool,
}

impl OqnsParams {
    pub fn new(potential: PotentialParams, landmark_threshold: f64, taylor_order: TaylorOrder, horizon: u64) -> Result<Self> {
        let p = Self {
            potential,
            landmark_threshold,
            taylor_order,
            horizon,
            max_taylor_order: DEFAULT_MAX_TAYLOR_ORDER,
            shadow_every: if cfg!(debug_assertions) { 64 } else { 0 },
            shadow_at_refresh: cfg!(debug_assertions),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_shadow(mut self, every: u64, at_refresh: bool) -> Self {
        self.shadow_every = every;
        self.shadow_at_refresh = at_refresh;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.landmark_threshold;
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidParams(format!("landmark threshold must lie in (0, 1), got {c}")));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParams("horizon must be positive".into()));
        }
        if let TaylorOrder::Fixed(0) = self.taylor_order {
            return Err(Error::InvalidParams("Taylor order must be at least 1".into()));
        }
        if self.max_taylor_order == 0 {
            return Err(Error::InvalidParams("Taylor order cap must be at least 1".into()));
        }
        Ok(())
    }

    /// The Taylor order actually used, after applying the cap to the automatic choice.
    pub fn resolved_taylor_order(&self) -> usize {
        match self.taylor_order {
            TaylorOrder::Fixed(m) => m,
            TaylorOrder::Auto => {
                let m = compute_taylor_order(self);
                if m > self.max_taylor_order {
                    warn!(
                        "automatic Taylor order {m} exceeds the cap {}; using the cap",
                        self.max_taylor_order
                    );
                    self.max_taylor_order
                } else {
                    m
                }
            }
        }
    }
}

/// `ceil(-log_c(12 (4 + 32/eta^2)^2 (2 eta d + B^2 eta + (B + 2 beta B^2) T)^2 T / (1 - c)))`,
/// floored at 1. The cap in [`OqnsParams::max_taylor_order`] is not applied here.
pub fn compute_taylor_order(params: &OqnsParams) -> usize {
    let p = &params.potential;
    let (d, eta, beta, b) = (p.dim() as f64, p.eta(), p.beta(), p.grad_bound());
    let c = params.landmark_threshold;
    let t = params.horizon as f64;
    let lead = 4.0 + 32.0 / (eta * eta);
    let growth = 2.0 * eta * d + b * b * eta + (b + 2.0 * beta * b * b) * t;
    let arg = 12.0 * lead * lead * growth * growth * t / (1.0 - c);
    let m = (-(arg.ln() / c.ln())).ceil();
    if m.is_finite() && m >= 1.0 {
        m as usize
    } else {
        1
    }
}

/// True when the landmark must move: `| |w_next|^2 - |u|^2 | > c (1 - |u|^2)`.
pub fn landmark_should_update(w_next: &Vector, u: &Vector, c: f64) -> bool {
    let un = u.norm_squared();
    (w_next.norm_squared() - un).abs() > c * (1.0 - un)
}

/// `sum_{k=1}^{m+1} gamma^{k-1} H^k v` with `H = h.inverse()`, using `m + 1` products.
pub fn taylor_inverse_apply(h: &SpdMatrixPair, gamma: f64, m: usize, v: &Vector) -> Result<Vector> {
    check_dim(h.dim(), v.len())?;
    let hm = h.inverse();
    let mut term = hm * v;
    let mut sum = term.clone();
    let mut next = Vector::zeros(v.len());
    for _ in 0..m {
        next.gemv(gamma, hm, &term, 0.0);
        std::mem::swap(&mut term, &mut next);
        sum += &term;
    }
    Ok(sum)
}

/// Dense `sum_{k=1}^{m+1} gamma^{k-1} H^k`; diagnostics only.
pub fn taylor_inverse_matrix(h: &SpdMatrixPair, gamma: f64, m: usize) -> Matrix {
    let hm = h.inverse();
    let mut term = hm.clone();
    let mut sum = term.clone();
    for _ in 0..m {
        term = (hm * &term) * gamma;
        sum += &term;
    }
    sum
}

/// What happened during one call to [`Oqns::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Round index `t` (1-based) of the gradient just consumed.
    pub round: u64,
    /// The iterate `w_t` at which the gradient was observed.
    pub played: Vector,
    /// The new iterate `w_{t+1}`.
    pub next: Vector,
    pub taylor_shift: f64,
    pub landmark_refreshed: bool,
    /// Spectral distance between the maintained `A` inverse and a dense inversion, when a
    /// shadow check ran this round.
    pub shadow_inverse_error: Option<f64>,
}

/// The learner. Owns its state; `step` must not be called concurrently.
#[derive(Debug, Clone)]
pub struct Oqns {
    params: OqnsParams,
    taylor_order: usize,
    w: Vector,
    u: Vector,
    acc: PotentialAccumulators,
    a: SpdMatrixPair,
    h: SpdMatrixPair,
    round: u64,
    landmark_refresh_count: u64,
    full_inversions: u64,
    shadow_inversions: u64,
}

impl Oqns {
    pub fn new(params: OqnsParams) -> Result<Self> {
        params.validate()?;
        let p = &params.potential;
        let d = p.dim();
        let a = SpdMatrixPair::scaled_identity(d, 2.0 * p.barrier_weight() + p.quadratic_weight())?;
        Ok(Self {
            taylor_order: params.resolved_taylor_order(),
            w: Vector::zeros(d),
            u: Vector::zeros(d),
            acc: PotentialAccumulators::new(d),
            h: a.clone(),
            a,
            params,
            round: 0,
            landmark_refresh_count: 0,
            full_inversions: 0,
            shadow_inversions: 0,
        })
    }

    pub fn params(&self) -> &OqnsParams {
        &self.params
    }
    pub fn dim(&self) -> usize {
        self.params.potential.dim()
    }
    pub fn taylor_order(&self) -> usize {
        self.taylor_order
    }
    /// The current iterate `w_t`.
    pub fn iterate(&self) -> &Vector {
        &self.w
    }
    pub fn landmark(&self) -> &Vector {
        &self.u
    }
    pub fn accumulators(&self) -> &PotentialAccumulators {
        &self.acc
    }
    /// Pair whose inverse is `A_t`.
    pub fn a(&self) -> &SpdMatrixPair {
        &self.a
    }
    /// Pair whose inverse is `H_t` from the last step.
    pub fn h(&self) -> &SpdMatrixPair {
        &self.h
    }
    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }
    pub fn landmark_refresh_count(&self) -> u64 {
        self.landmark_refresh_count
    }
    /// Dense inversions performed by the learner itself (shadow checks excluded).
    pub fn full_inversions(&self) -> u64 {
        self.full_inversions
    }
    pub fn shadow_inversions(&self) -> u64 {
        self.shadow_inversions
    }

    /// Consumes the subgradient observed at the current iterate and moves to the next one.
    ///
    /// On error the learner is left exactly as it was before the call.
    pub fn step(&mut self, g: &Vector) -> Result<StepInfo> {
        let p = self.params.potential;
        check_dim(p.dim(), g.len())?;
        let gnorm = g.norm();
        if !gnorm.is_finite() || gnorm > p.grad_bound() * (1.0 + GRAD_BOUND_SLACK) {
            return Err(Error::AssumptionViolation(format!(
                "gradient norm {gnorm} exceeds the bound B = {}",
                p.grad_bound()
            )));
        }
        let k = p.barrier_weight();
        let c = self.params.landmark_threshold;

        let mut acc = self.acc.clone();
        acc.observe(g, &self.w)?;
        let a = rank_one_inverse_update(&self.a, g, p.beta())?;
        let slack_w = slack(&self.w)?;
        let slack_u = slack(&self.u)?;
        let h = rank_one_inverse_update(&a, &self.w, 4.0 * k / (slack_w * slack_w))?;
        let gamma = 2.0 * k / slack_u - 2.0 * k / slack_w;
        debug_assert!(
            gamma.abs() / (2.0 * k / slack_u + p.quadratic_weight()) <= c / (1.0 - c) + 1e-9,
            "Taylor shift outside the convergent range"
        );

        let grad = phi_gradient(&self.w, &p, &acc)?;
        let delta = taylor_inverse_apply(&h, gamma, self.taylor_order, &grad)?;
        let next = &self.w - delta;
        let next_slack = 1.0 - next.norm_squared();
        if !(next_slack >= crate::barrier::DOMAIN_MARGIN) {
            return Err(Error::Degenerate(format!(
                "iterate left the ball interior at round {}: |w_next| = {}, 1 - |w_next|^2 = {next_slack:e}, \
                 |w| = {}, |u| = {}, gamma = {gamma:e}, |g| = {gnorm}, |grad Phi| = {}, m = {}, \
                 eta = {}, beta = {}, B = {}, c = {c}",
                self.round + 1,
                next.norm(),
                self.w.norm(),
                self.u.norm(),
                grad.norm(),
                self.taylor_order,
                p.eta(),
                p.beta(),
                p.grad_bound(),
            )));
        }

        let round = self.round + 1;
        let refresh = landmark_should_update(&next, &self.u, c);
        let sampled = self.params.shadow_every > 0 && round % self.params.shadow_every == 0;
        let mut shadow_inverse_error = None;
        if (refresh && self.params.shadow_at_refresh) || sampled {
            let dense = full_inverse_spd(a.forward())?;
            self.shadow_inversions += 1;
            let mut diff = a.inverse() - dense;
            crate::linalg::symmetrize(&mut diff);
            shadow_inverse_error = Some(spectral_norm(&diff, 1e-6)?);
        }

        let a = if refresh {
            let d = p.dim();
            let mut forward = Matrix::identity(d, d) * (2.0 * k / next_slack + p.quadratic_weight());
            forward += &acc.outer_sum * p.beta();
            let rebuilt = SpdMatrixPair::from_forward(forward)?;
            self.full_inversions += 1;
            self.landmark_refresh_count += 1;
            self.u = next.clone();
            rebuilt
        } else {
            a
        };

        let played = std::mem::replace(&mut self.w, next.clone());
        self.acc = acc;
        self.a = a;
        self.h = h;
        self.round = round;
        Ok(StepInfo {
            round,
            played,
            next,
            taylor_shift: gamma,
            landmark_refreshed: refresh,
            shadow_inverse_error,
        })
    }

    /// Spectral distance between the exact inverse Hessian of the potential at the
    /// iterate that produced `info` and the truncated series the learner applied.
    ///
    /// Must be called right after the step that produced `info`.
    pub fn taylor_error(&self, info: &StepInfo) -> Result<f64> {
        if info.round != self.round {
            return Err(Error::Contract(format!(
                "taylor_error for round {} requested after round {}",
                info.round, self.round
            )));
        }
        let hess = phi_hessian(&info.played, &self.params.potential, &self.acc)?;
        let exact = full_inverse_spd(&hess)?;
        let approx = taylor_inverse_matrix(&self.h, info.taylor_shift, self.taylor_order);
        let mut diff = exact - approx;
        crate::linalg::symmetrize(&mut diff);
        spectral_norm(&diff, 1e-6)
    }
}
