//! Dense symmetric linear algebra used by the learners.
//!
//! Matrices are `nalgebra` dense matrices. Everything here is `f64`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Quadratic forms below this are treated as rounding noise rather than indefiniteness.
const QUAD_FORM_FLOOR: f64 = -1e-12;
const RANK_ONE_MIN_DENOM: f64 = 1e-14;
const POWER_ITER_CAP: usize = 200_000;
const POWER_ITER_SEED: u64 = 0x5eed_0f_0e15;

/// A symmetric positive-definite matrix kept together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrixPair {
    forward: Matrix,
    inverse: Matrix,
}

impl SpdMatrixPair {
    /// Pairs `forward` with an inverse the caller vouches for.
    pub fn new(forward: Matrix, inverse: Matrix) -> Result<Self> {
        if !forward.is_square() {
            return Err(Error::Contract("forward matrix is not square".into()));
        }
        check_dim(forward.nrows(), inverse.nrows())?;
        check_dim(forward.ncols(), inverse.ncols())?;
        Ok(Self { forward, inverse })
    }

    /// Builds the pair by inverting `forward` with [`full_inverse_spd`].
    pub fn from_forward(forward: Matrix) -> Result<Self> {
        let inverse = full_inverse_spd(&forward)?;
        Ok(Self { forward, inverse })
    }

    /// `scale * I` and its inverse.
    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParams(format!(
                "identity scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self {
            forward: Matrix::identity(dim, dim) * scale,
            inverse: Matrix::identity(dim, dim) / scale,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            forward: Matrix::identity(dim, dim),
            inverse: Matrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.forward.nrows()
    }

    pub fn forward(&self) -> &Matrix {
        &self.forward
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    /// Spectral norm of `forward * inverse - I`.
    pub fn inverse_residual(&self) -> Result<f64> {
        let d = self.dim();
        let r = &self.forward * &self.inverse - Matrix::identity(d, d);
        // r is not symmetric; ||r|| = sqrt(||r^T r||).
        let mut gram = r.transpose() * &r;
        symmetrize(&mut gram);
        Ok(spectral_norm(&gram, 1e-10)?.sqrt())
    }
}

/// `v v^T`.
pub fn outer(v: &Vector) -> Matrix {
    v * v.transpose()
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest `|m[i][j] - m[j][i]|`.
pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `sqrt(v^T M v)`, the norm induced by a PSD matrix.
pub fn metric_norm(v: &Vector, m: &Matrix) -> Result<f64> {
    check_dim(m.nrows(), v.len())?;
    check_dim(m.ncols(), v.len())?;
    let q = v.dot(&(m * v));
    if q < 0.0 {
        let scale = v.norm_squared() * m.amax();
        if q < QUAD_FORM_FLOOR * scale.max(1.0) {
            return Err(Error::Degenerate(format!(
                "negative quadratic form {q:e} in metric norm"
            )));
        }
        return Ok(0.0);
    }
    Ok(q.sqrt())
}

/// Sherman-Morrison: the pair for `forward + coeff * v v^T`.
pub fn rank_one_inverse_update(p: &SpdMatrixPair, v: &Vector, coeff: f64) -> Result<SpdMatrixPair> {
    check_dim(p.dim(), v.len())?;
    if coeff == 0.0 {
        return Ok(p.clone());
    }
    let iv = &p.inverse * v;
    let denom = 1.0 + coeff * v.dot(&iv);
    if denom <= RANK_ONE_MIN_DENOM {
        return Err(Error::Singular(denom));
    }
    let mut forward = p.forward.clone();
    forward.ger(coeff, v, v, 1.0);
    let mut inverse = p.inverse.clone();
    inverse.ger(-coeff / denom, &iv, &iv, 1.0);
    symmetrize(&mut forward);
    symmetrize(&mut inverse);
    Ok(SpdMatrixPair { forward, inverse })
}

/// Lower-triangular Cholesky factor; fails on the first non-positive pivot.
pub fn cholesky_lower(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Contract("cholesky of a non-square matrix".into()));
    }
    let n = m.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, value: pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn full_inverse_spd(m: &Matrix) -> Result<Matrix> {
    let l = cholesky_lower(m)?;
    let n = l.nrows();
    let linv = l
        .solve_lower_triangular(&Matrix::identity(n, n))
        .ok_or_else(|| Error::Singular(0.0))?;
    let mut inv = linv.transpose() * &linv;
    symmetrize(&mut inv);
    Ok(inv)
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on `M^2`.
///
/// The start vector is drawn from a fixed seed so results are reproducible.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Contract("spectral norm of a non-square matrix".into()));
    }
    let n = m.nrows();
    if n == 0 || m.amax() == 0.0 {
        return Ok(0.0);
    }
    // Rescale so the iteration never over/underflows.
    let scale = m.amax();
    let ms = m / scale;
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0) + 1e-3);
    v.normalize_mut();
    let mut estimate = 0.0f64;
    // Relative changes shrink geometrically; demand a margin below `tol` so the
    // reported value is within `tol` of the limit rather than of the previous step.
    let stop = (tol * 1e-2).max(f64::EPSILON);
    for it in 0..POWER_ITER_CAP {
        let mv = &ms * &v;
        let mmv = &ms * &mv;
        let next = mv.norm();
        let nn = mmv.norm();
        if nn == 0.0 {
            // v was in the null space; matrix still nonzero so perturb deterministically.
            v = Vector::from_fn(n, |i, _| ((i + it + 1) as f64).sin());
            v.normalize_mut();
            continue;
        }
        v = mmv / nn;
        if it > 2 && (next - estimate).abs() <= stop * next {
            return Ok(next * scale);
        }
        estimate = next;
    }
    Err(Error::Convergence {
        iterations: POWER_ITER_CAP,
        last_estimate: estimate * scale,
    })
}
