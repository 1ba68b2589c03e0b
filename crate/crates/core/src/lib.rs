//! Online quasi-Newton steps for exp-concave online optimization.
//!
//! The learner in [`oqns`] keeps a barrier-regularized potential over the unit ball and
//! moves with approximate Newton steps whose inverse Hessian is maintained by rank-one
//! updates plus a truncated series around a rarely refreshed landmark. [`reduction`] lets
//! any ball learner play over a general convex set given projection or separation oracles.

pub mod barrier;
pub mod baselines;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod oqns;
pub mod reduction;
pub mod sets;
pub mod stochastic;

pub use barrier::{PotentialAccumulators, PotentialParams};
pub use baselines::{ftrl_solve, Ogd, Ons, OnsParams};
pub use error::{Error, Result};
pub use linalg::{Matrix, SpdMatrixPair, Vector};
pub use losses::{LossKind, LossSpec};
pub use oqns::{Oqns, OqnsParams, StepInfo, TaylorOrder};
pub use reduction::{BallLearner, ReductionMode, Wrapper};
pub use sets::{Ball, ConvexSet, Ellipsoid, Hypercube, L1Ball, Polytope};
