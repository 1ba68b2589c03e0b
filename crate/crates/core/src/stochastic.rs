//! Averaging online iterates and measuring excess population risk.

use log::warn;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Vector;
use crate::losses::{LossSpec, StochasticSquareStream};
use crate::sets::ConvexSet;

const SOLVE_TOL: f64 = 1e-10;
const SOLVE_MAX_ITERATIONS: usize = 100_000;

/// `ceil(d ln(d / eps) / (alpha eps))`, at least 1. Warns when `eps > 1/d`.
pub fn required_horizon(dim: usize, alpha: f64, eps: f64) -> Result<u64> {
    if dim == 0 || !(alpha > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidParams(format!(
            "need dim >= 1, alpha > 0, eps > 0 (got {dim}, {alpha}, {eps})"
        )));
    }
    let d = dim as f64;
    if eps > 1.0 / d {
        warn!("target accuracy {eps} exceeds 1/d = {}; the horizon formula is outside its regime", 1.0 / d);
    }
    let t = (d * (d / eps).ln() / (alpha * eps)).ceil();
    Ok(if t.is_finite() && t >= 1.0 { t as u64 } else { 1 })
}

/// Arithmetic mean of the iterates.
pub fn online_to_batch(iterates: &[Vector]) -> Result<Vector> {
    let first = iterates.first().ok_or_else(|| Error::Contract("no iterates to average".into()))?;
    let mut sum = Vector::zeros(first.len());
    for u in iterates {
        check_dim(first.len(), u.len())?;
        sum += u;
    }
    Ok(sum / iterates.len() as f64)
}

/// Running mean of iterates without storing them.
#[derive(Debug, Clone)]
pub struct IterateAverage {
    sum: Vector,
    count: u64,
}

impl IterateAverage {
    pub fn new(dim: usize) -> Self {
        Self { sum: Vector::zeros(dim), count: 0 }
    }

    pub fn push(&mut self, u: &Vector) {
        self.sum += u;
        self.count += 1;
    }

    pub fn mean(&self) -> Result<Vector> {
        if self.count == 0 {
            return Err(Error::Contract("no iterates to average".into()));
        }
        Ok(&self.sum / self.count as f64)
    }
}

/// A population risk available in closed form.
pub trait PopulationRisk {
    fn dim(&self) -> usize;
    fn value(&self, u: &Vector) -> f64;
    fn gradient(&self, u: &Vector) -> Vector;
}

impl PopulationRisk for StochasticSquareStream {
    fn dim(&self) -> usize {
        StochasticSquareStream::dim(self)
    }
    fn value(&self, u: &Vector) -> f64 {
        self.population_risk(u)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        self.population_gradient(u)
    }
}

/// A risk multiplied by a positive constant, e.g. the reciprocal Lipschitz bound.
#[derive(Debug, Clone)]
pub struct ScaledRisk<R> {
    pub inner: R,
    pub scale: f64,
}

impl<R: PopulationRisk> PopulationRisk for ScaledRisk<R> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, u: &Vector) -> f64 {
        self.scale * self.inner.value(u)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        self.inner.gradient(u) * self.scale
    }
}

/// How the risk minimizer is obtained.
#[derive(Debug, Clone, Copy)]
pub enum Minimizer<'a> {
    Known(&'a Vector),
    /// Projected gradient descent over the set.
    Solve(&'a dyn ConvexSet),
}

/// Projected gradient descent with monotone backtracking, until a step moves less than `1e-10`.
pub fn minimize_risk(risk: &dyn PopulationRisk, set: &dyn ConvexSet) -> Result<Vector> {
    check_dim(set.dim(), risk.dim())?;
    let mut x = set.project(&Vector::zeros(risk.dim()))?;
    let mut step = 1.0;
    for _ in 0..SOLVE_MAX_ITERATIONS {
        let fx = risk.value(&x);
        let g = risk.gradient(&x);
        loop {
            let y = set.project(&(&x - &g * step))?;
            let d = &y - &x;
            // Sufficient decrease for an L-smooth function with L <= 1/step.
            if risk.value(&y) <= fx + g.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 * fx.abs() {
                if d.norm() <= SOLVE_TOL {
                    return Ok(y);
                }
                x = y;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(Error::Convergence { iterations: 0, last_estimate: fx });
            }
        }
    }
    Err(Error::Convergence { iterations: SOLVE_MAX_ITERATIONS, last_estimate: risk.value(&x) })
}

/// `f(u) - f(u*)`.
pub fn excess_risk(risk: &dyn PopulationRisk, u: &Vector, minimizer: Minimizer<'_>) -> Result<f64> {
    check_dim(risk.dim(), u.len())?;
    let best = match minimizer {
        Minimizer::Known(v) => risk.value(v),
        Minimizer::Solve(set) => risk.value(&minimize_risk(risk, set)?),
    };
    Ok(risk.value(u) - best)
}

/// Sample mean and standard error.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Monte-Carlo estimate of `E f(u)` from `samples` draws; fails when the standard error
/// exceeds `precision`.
pub fn monte_carlo_risk<I>(losses: I, u: &Vector, samples: usize, precision: f64) -> Result<(f64, f64)>
where
    I: Iterator<Item = LossSpec>,
{
    let values = losses.take(samples).map(|f| f.value(u)).collect::<Result<Vec<f64>>>()?;
    if values.len() < 2 {
        return Err(Error::Contract("need at least two samples".into()));
    }
    let (mean, se) = mean_and_std_error(&values);
    if se > precision {
        return Err(Error::Precision { std_error: se, requested: precision });
    }
    Ok((mean, se))
}

/// Excess risk of averaged iterates across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct BatchResult {
    pub averaged_points: Vec<Vec<f64>>,
    pub horizon: u64,
    pub excess_risk_estimate: f64,
    pub std_error: f64,
    pub seeds: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::test_util::random_in_ball;
    use crate::sets::{Ball, Hypercube};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(required_horizon(5, 0.5, 0.05).unwrap(), 922);
        assert!(required_horizon(5, 0.5, 0.025).unwrap() > 2 * 922);
        assert_eq!(required_horizon(1, 1.0, 1.0).unwrap(), 1);
        assert!(required_horizon(1, 0.0, 0.1).is_err());
    }

    #[test]
    fn averaging_examples() {
        let w = v(&[0.3, -0.2]);
        assert!((online_to_batch(&[w.clone(), w.clone(), w.clone()]).unwrap() - &w).amax() < 1e-15);
        assert_eq!(online_to_batch(&[Vector::zeros(2), w.clone()]).unwrap(), &w / 2.0);
        assert!(matches!(online_to_batch(&[]), Err(Error::Contract(_))));
        assert!(IterateAverage::new(2).mean().is_err());
    }

    #[test]
    fn averaging_matches_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 3;
        let xs: Vec<Vector> = (0..10_000).map(|_| random_in_ball(&mut rng, d, 1.0)).collect();
        let mut avg = IterateAverage::new(d);
        xs.iter().for_each(|x| avg.push(x));
        let got = online_to_batch(&xs).unwrap();
        assert!((avg.mean().unwrap() - &got).amax() < 1e-15);
        for i in 0..d {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for x in &xs {
                let y = x[i] - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
            assert!((got[i] - s / xs.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn excess_risk_examples() {
        let t = v(&[0.2, -0.1]);
        let stream = StochasticSquareStream::new(t.clone(), 0.0, 0).unwrap();
        assert_eq!(excess_risk(&stream, &t, Minimizer::Known(&t)).unwrap(), 0.0);
        let ball = Ball::new(2);
        assert!(excess_risk(&stream, &t, Minimizer::Solve(&ball)).unwrap().abs() < 1e-18);
    }

    #[test]
    fn excess_risk_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = v(&[0.3, 0.1]);
        let stream = StochasticSquareStream::new(t.clone(), 0.2, 0).unwrap();
        let ball = Ball::new(2);
        for _ in 0..50 {
            let u = random_in_ball(&mut rng, 2, 1.0);
            let r = &u - &t;
            let want = r.dot(&(&r * 0.5));
            assert!((excess_risk(&stream, &u, Minimizer::Known(&t)).unwrap() - want).abs() < 1e-8);
            assert!((excess_risk(&stream, &u, Minimizer::Solve(&ball)).unwrap() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn solver_finds_constrained_minimizer() {
        // Target outside the cube: the minimizer is the clamp.
        let t = v(&[0.9, -0.1, 0.0]);
        let stream = StochasticSquareStream::new(t.clone(), 0.0, 0).unwrap();
        let cube = Hypercube::new(3);
        let x = minimize_risk(&stream, &cube).unwrap();
        let a = 1.0 / 3f64.sqrt();
        assert!((x - v(&[a, -0.1, 0.0])).norm() < 1e-8);
    }

    #[test]
    fn monte_carlo_precision() {
        let t = v(&[0.1, 0.2, 0.0]);
        let stream = StochasticSquareStream::new(t.clone(), 0.1, 3).unwrap();
        let u = v(&[0.0, 0.0, 0.5]);
        let (mean, se) = monte_carlo_risk(stream.clone(), &u, 50_000, 1e-2).unwrap();
        assert!((mean - stream.population_risk(&u)).abs() <= 4.0 * se);
        let e = monte_carlo_risk(stream, &u, 10, 1e-9);
        assert!(matches!(e, Err(Error::Precision { .. })));
    }

    #[test]
    fn scaled_risk() {
        let t = v(&[0.1]);
        let s = ScaledRisk { inner: StochasticSquareStream::new(t, 0.0, 0).unwrap(), scale: 0.25 };
        let u = v(&[0.5]);
        assert!((s.value(&u) - 0.25 * 0.16).abs() < 1e-15);
        assert!((s.gradient(&u)[0] - 0.25 * 0.8).abs() < 1e-15);
    }
}
