//! Exp-concave loss families and seeded loss streams.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Vector;

/// Noise draws are rejected beyond this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `(<w, x> - y)^2`
    Square { x: Vector, y: f64 },
    /// `-ln <w, x>` for a vector of price relatives.
    LogPortfolio { x: Vector },
    /// `ln(1 + exp(-y <w, x>))` with `y` in {-1, +1}.
    Logistic { x: Vector, y: f64 },
}

/// One round's loss, multiplied by `scale` (1 unless rescaled).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub alpha: f64,
    pub lipschitz_bound: f64,
    pub scale: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, alpha: f64, lipschitz_bound: f64) -> Self {
        Self { kind, alpha, lipschitz_bound, scale: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            LossKind::Square { x, .. } | LossKind::LogPortfolio { x } | LossKind::Logistic { x, .. } => {
                x.len()
            }
        }
    }

    pub fn value(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let raw = match &self.kind {
            LossKind::Square { x, y } => (w.dot(x) - y).powi(2),
            LossKind::LogPortfolio { x } => {
                let r = w.dot(x);
                if r <= 0.0 {
                    return Err(Error::Domain { norm: r });
                }
                -r.ln()
            }
            LossKind::Logistic { x, y } => softplus(-y * w.dot(x)),
        };
        Ok(self.scale * raw)
    }

    pub fn subgradient(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.len())?;
        let g = match &self.kind {
            LossKind::Square { x, y } => x * (2.0 * (w.dot(x) - y)),
            LossKind::LogPortfolio { x } => {
                let r = w.dot(x);
                if r <= 0.0 {
                    return Err(Error::Domain { norm: r });
                }
                x * (-1.0 / r)
            }
            LossKind::Logistic { x, y } => x * (-y * sigmoid(-y * w.dot(x))),
        };
        Ok(g * self.scale)
    }

    /// Divides the loss by its Lipschitz bound. The result is `alpha * L`-exp-concave.
    pub fn rescale_to_unit_lipschitz(mut self) -> Self {
        let l = self.lipschitz_bound;
        self.scale /= l;
        self.alpha *= l;
        self.lipschitz_bound = 1.0;
        self
    }
}

pub fn rescale_to_unit_lipschitz<I>(stream: I) -> impl Iterator<Item = LossSpec>
where
    I: Iterator<Item = LossSpec>,
{
    stream.map(LossSpec::rescale_to_unit_lipschitz)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Exp-concavity constant of the square loss when `|<w, x> - y| <= residual_bound`.
pub fn square_alpha(residual_bound: f64) -> f64 {
    1.0 / (2.0 * residual_bound * residual_bound)
}

/// Exp-concavity constant of the logistic loss when `|<w, x>| <= margin_bound`.
pub fn logistic_alpha(margin_bound: f64) -> f64 {
    (-margin_bound).exp()
}

fn unit_sphere(rng: &mut impl Rng, d: usize) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Square-loss regression stream `y = <w*, x> + n` with `x` uniform on the unit sphere
/// and `n` a Gaussian truncated at [`NOISE_TRUNCATION`] standard deviations.
///
/// Declared constants assume predictions `w` in the unit ball.
#[derive(Debug, Clone)]
pub struct StochasticSquareStream {
    target: Vector,
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl StochasticSquareStream {
    pub fn new(target: Vector, noise_std: f64, seed: u64) -> Result<Self> {
        if target.is_empty() || target.norm() > 1.0 {
            return Err(Error::InvalidParams("target must be a nonempty point of the unit ball".into()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParams(format!("noise level {noise_std} must be finite and >= 0")));
        }
        Ok(Self { target, noise_std, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    /// Bound on `|<w, x> - y|` over the unit ball.
    pub fn residual_bound(&self) -> f64 {
        1.0 + self.target.norm() + NOISE_TRUNCATION * self.noise_std
    }

    pub fn lipschitz_bound(&self) -> f64 {
        2.0 * self.residual_bound()
    }

    pub fn alpha(&self) -> f64 {
        square_alpha(self.residual_bound())
    }

    /// Variance of the truncated noise.
    pub fn noise_variance(&self) -> f64 {
        if self.noise_std == 0.0 {
            return 0.0;
        }
        let n = Normal::standard();
        let k = NOISE_TRUNCATION;
        let mass = 2.0 * n.cdf(k) - 1.0;
        self.noise_std.powi(2) * (1.0 - 2.0 * k * n.pdf(k) / mass)
    }

    /// `E f(w) = |w - w*|^2 / d + Var(n)`, unscaled.
    pub fn population_risk(&self, w: &Vector) -> f64 {
        (w - &self.target).norm_squared() / self.dim() as f64 + self.noise_variance()
    }

    pub fn population_gradient(&self, w: &Vector) -> Vector {
        (w - &self.target) * (2.0 / self.dim() as f64)
    }

    fn noise(&mut self) -> f64 {
        if self.noise_std == 0.0 {
            return 0.0;
        }
        loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if z.abs() <= NOISE_TRUNCATION {
                return self.noise_std * z;
            }
        }
    }
}

impl Iterator for StochasticSquareStream {
    type Item = LossSpec;

    fn next(&mut self) -> Option<LossSpec> {
        let d = self.dim();
        let x = unit_sphere(&mut self.rng, d);
        let y = self.target.dot(&x) + self.noise();
        Some(LossSpec::new(LossKind::Square { x, y }, self.alpha(), self.lipschitz_bound()))
    }
}

/// Square-loss stream whose target flips sign at the end of epochs of doubling length
/// (1, 2, 4, ...). Features are uniform on the unit sphere, labels noise-free.
#[derive(Debug, Clone)]
pub struct AdversarialSquareStream {
    target: Vector,
    rng: ChaCha8Rng,
    round: u64,
    epoch_end: u64,
    sign: f64,
}

impl AdversarialSquareStream {
    /// Draws a random target of norm `target_norm <= 1`.
    pub fn new(dim: usize, target_norm: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !(0.0..=1.0).contains(&target_norm) {
            return Err(Error::InvalidParams("need dim >= 1 and target norm in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = unit_sphere(&mut rng, dim) * target_norm;
        Ok(Self { target, rng, round: 0, epoch_end: 1, sign: 1.0 })
    }

    pub fn residual_bound(&self) -> f64 {
        2.0
    }

    pub fn lipschitz_bound(&self) -> f64 {
        2.0 * self.residual_bound()
    }

    pub fn alpha(&self) -> f64 {
        square_alpha(self.residual_bound())
    }
}

impl Iterator for AdversarialSquareStream {
    type Item = LossSpec;

    fn next(&mut self) -> Option<LossSpec> {
        if self.round == self.epoch_end {
            self.sign = -self.sign;
            self.epoch_end *= 2;
        }
        self.round += 1;
        let x = unit_sphere(&mut self.rng, self.target.len());
        let y = self.sign * self.target.dot(&x);
        Some(LossSpec::new(LossKind::Square { x, y }, self.alpha(), self.lipschitz_bound()))
    }
}

/// Logistic-loss stream: unit-norm features, labels from a linear target with
/// flip probability `flip`.
#[derive(Debug, Clone)]
pub struct LogisticStream {
    target: Vector,
    flip: f64,
    rng: ChaCha8Rng,
}

impl LogisticStream {
    pub fn new(target: Vector, flip: f64, seed: u64) -> Result<Self> {
        if target.is_empty() || !(0.0..=0.5).contains(&flip) {
            return Err(Error::InvalidParams("need nonempty target and flip in [0, 0.5]".into()));
        }
        Ok(Self { target, flip, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn alpha(&self) -> f64 {
        logistic_alpha(1.0)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        1.0
    }
}

impl Iterator for LogisticStream {
    type Item = LossSpec;

    fn next(&mut self) -> Option<LossSpec> {
        let x = unit_sphere(&mut self.rng, self.target.len());
        let mut y = if self.target.dot(&x) >= 0.0 { 1.0 } else { -1.0 };
        if self.rng.random::<f64>() < self.flip {
            y = -y;
        }
        Some(LossSpec::new(LossKind::Logistic { x, y }, self.alpha(), self.lipschitz_bound()))
    }
}

/// Price relatives drawn uniformly from `[0.5, 2]^d`. Declared constants hold on the simplex.
#[derive(Debug, Clone)]
pub struct PortfolioStream {
    dim: usize,
    rng: ChaCha8Rng,
}

impl PortfolioStream {
    pub const LOW: f64 = 0.5;
    pub const HIGH: f64 = 2.0;

    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// `|x| / <w, x>` over the simplex.
    pub fn lipschitz_bound(&self) -> f64 {
        Self::HIGH * (self.dim as f64).sqrt() / Self::LOW
    }
}

impl Iterator for PortfolioStream {
    type Item = LossSpec;

    fn next(&mut self) -> Option<LossSpec> {
        let x = Vector::from_fn(self.dim, |_, _| self.rng.random_range(Self::LOW..=Self::HIGH));
        Some(LossSpec::new(LossKind::LogPortfolio { x }, 1.0, self.lipschitz_bound()))
    }
}

/// Reads `(x, y)` pairs from CSV with a header row; the last column is the label.
pub fn read_regression_csv<R: Read>(reader: R) -> Result<Vec<(Vector, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse { line, message: format!("not a number: {f:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() < 2 {
            return Err(Error::Parse { line, message: "need at least one feature and a label".into() });
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse { line, message: "inconsistent number of columns".into() });
        }
        let (y, x) = values.split_last().expect("nonempty");
        rows.push((Vector::from_column_slice(x), *y));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::test_util::random_in_ball;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn central_difference(spec: &LossSpec, w: &Vector) -> Vector {
        let h = 1e-6;
        Vector::from_fn(w.len(), |i, _| {
            let mut p = w.clone();
            let mut m = w.clone();
            p[i] += h;
            m[i] -= h;
            (spec.value(&p).unwrap() - spec.value(&m).unwrap()) / (2.0 * h)
        })
    }

    fn sample_specs(seed: u64, d: usize) -> Vec<(LossSpec, Vector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let target = random_in_ball(&mut rng, d, 0.5);
        for spec in StochasticSquareStream::new(target.clone(), 0.1, seed).unwrap().take(20) {
            out.push((spec, random_in_ball(&mut rng, d, 1.0)));
        }
        for spec in LogisticStream::new(target, 0.1, seed).unwrap().take(20) {
            out.push((spec, random_in_ball(&mut rng, d, 1.0)));
        }
        for spec in PortfolioStream::new(d, seed).take(20) {
            let raw = Vector::from_fn(d, |_, _| rng.random_range(0.01..1.0));
            let s = raw.sum();
            out.push((spec, raw / s));
        }
        out
    }

    #[test]
    fn value_examples() {
        let sq = LossSpec::new(LossKind::Square { x: v(&[1.0, 2.0]), y: 3.0 }, 1.0, 1.0);
        let w = v(&[1.0, 1.0]);
        assert_eq!(sq.value(&w).unwrap(), 0.0);
        assert_eq!(sq.subgradient(&w).unwrap(), v(&[0.0, 0.0]));
        let pf = LossSpec::new(LossKind::LogPortfolio { x: v(&[0.5, 1.5]) }, 1.0, 1.0);
        let w = v(&[0.5, 0.5]);
        assert_eq!(pf.value(&w).unwrap(), 0.0);
        assert_eq!(pf.subgradient(&w).unwrap(), v(&[-0.5, -1.5]));
        assert!(matches!(pf.value(&v(&[0.0, 0.0])), Err(Error::Domain { .. })));
        let lg = LossSpec::new(LossKind::Logistic { x: v(&[1.0]), y: 1.0 }, 1.0, 1.0);
        assert!((lg.value(&v(&[0.0])).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(lg.value(&v(&[0.0, 1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for d in [1, 3, 5] {
            for (spec, w) in sample_specs(d as u64, d) {
                let g = spec.subgradient(&w).unwrap();
                let fd = central_difference(&spec, &w);
                assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1.0), "{:?}", spec.kind);
            }
        }
    }

    #[test]
    fn gradients_respect_lipschitz_bound() {
        for d in [1, 4] {
            for (spec, w) in sample_specs(10 + d as u64, d) {
                assert!(spec.subgradient(&w).unwrap().norm() <= spec.lipschitz_bound);
                let r = spec.clone().rescale_to_unit_lipschitz();
                assert!(r.subgradient(&w).unwrap().norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn exp_concavity_probe() {
        // exp(-alpha f) must be midpoint concave; rescaled losses use alpha * L.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let specs = sample_specs(3, d);
        for (spec, _) in &specs {
            for s in [spec.clone(), spec.clone().rescale_to_unit_lipschitz()] {
                for _ in 0..1000 / specs.len() + 1 {
                    let (a, b) = match s.kind {
                        LossKind::LogPortfolio { .. } => {
                            let a = Vector::from_fn(d, |_, _| rng.random_range(0.01..1.0));
                            let b = Vector::from_fn(d, |_, _| rng.random_range(0.01..1.0));
                            let (sa, sb) = (a.sum(), b.sum());
                            (a / sa, b / sb)
                        }
                        _ => (random_in_ball(&mut rng, d, 1.0), random_in_ball(&mut rng, d, 1.0)),
                    };
                    let e = |p: &Vector| (-s.alpha * s.value(p).unwrap()).exp();
                    let mid = e(&((&a + &b) * 0.5));
                    assert!(mid >= 0.5 * (e(&a) + e(&b)) - 1e-10);
                }
            }
        }
    }

    #[test]
    fn surrogate_inequality_holds() {
        // f(x) - f(w) <= <x - w, g> - beta/2 <x - w, g>^2 for unit-Lipschitz losses on the ball.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (spec, _) in sample_specs(4, 3) {
            if matches!(spec.kind, LossKind::LogPortfolio { .. }) {
                continue;
            }
            let s = spec.rescale_to_unit_lipschitz();
            let beta = (1.0f64 / 8.0).min(s.alpha / 2.0);
            for _ in 0..50 {
                let x = random_in_ball(&mut rng, 3, 1.0);
                let w = random_in_ball(&mut rng, 3, 1.0);
                let z = (&x - &w).dot(&s.subgradient(&x).unwrap());
                let lhs = s.value(&x).unwrap() - s.value(&w).unwrap();
                assert!(lhs <= z - 0.5 * beta * z * z + 1e-12);
            }
        }
    }

    #[test]
    fn rescale_examples() {
        let spec = LossSpec::new(LossKind::Square { x: v(&[1.0]), y: 0.0 }, 0.1, 1.0);
        assert_eq!(spec.clone().rescale_to_unit_lipschitz(), spec);
        let spec = LossSpec::new(LossKind::Square { x: v(&[1.0]), y: 0.0 }, 0.1, 5.0);
        let w = v(&[0.7]);
        let r = spec.clone().rescale_to_unit_lipschitz();
        assert!((r.subgradient(&w).unwrap() - spec.subgradient(&w).unwrap() / 5.0).norm() < 1e-15);
        assert!((r.alpha - 0.5).abs() < 1e-15);
        let all: Vec<_> = rescale_to_unit_lipschitz(std::iter::repeat_n(spec, 3)).collect();
        assert!(all.iter().all(|s| s.lipschitz_bound == 1.0));
    }

    #[test]
    fn streams_are_deterministic() {
        let t = v(&[0.3, -0.2]);
        let a: Vec<_> = StochasticSquareStream::new(t.clone(), 0.1, 9).unwrap().take(50).collect();
        let b: Vec<_> = StochasticSquareStream::new(t, 0.1, 9).unwrap().take(50).collect();
        assert_eq!(a, b);
        let a: Vec<_> = AdversarialSquareStream::new(3, 1.0, 9).unwrap().take(50).collect();
        let b: Vec<_> = AdversarialSquareStream::new(3, 1.0, 9).unwrap().take(50).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn adversarial_labels_stay_bounded() {
        let s = AdversarialSquareStream::new(4, 1.0, 1).unwrap();
        for spec in s.take(300) {
            let LossKind::Square { y, .. } = spec.kind else { unreachable!() };
            assert!(y.abs() <= 1.0);
        }
    }

    #[test]
    fn realizable_risk_minimized_at_target() {
        let t = v(&[0.2, 0.1, -0.3]);
        let s = StochasticSquareStream::new(t.clone(), 0.0, 0).unwrap();
        assert_eq!(s.population_risk(&t), 0.0);
        assert_eq!(s.population_gradient(&t).norm(), 0.0);
        for spec in s.take(100) {
            assert!(spec.value(&t).unwrap() < 1e-30);
        }
    }

    #[test]
    fn empirical_risk_matches_closed_form() {
        let t = v(&[0.3, -0.1, 0.2, 0.0, 0.1]);
        let s = StochasticSquareStream::new(t.clone(), 0.1, 77).unwrap();
        let want = s.population_risk(&t);
        let n = 100_000;
        let vals: Vec<f64> = s.clone().take(n).map(|f| f.value(&t).unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "mean {mean} want {want} se {se}");
        // Off-target point exercises the feature covariance I/d.
        let u = v(&[0.0, 0.2, 0.0, -0.3, 0.4]);
        let vals: Vec<f64> = s.take(n).map(|f| f.value(&u).unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let want = (&u - &t).norm_squared() / 5.0 + 0.01 * (1.0 - 8.0 * (-8.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt() / 0.999_936_657_516_333_6);
        assert!((mean - want).abs() <= 3.0 * se, "mean {mean} want {want} se {se}");
    }

    #[test]
    fn declared_constants_for_default_stream() {
        let s = StochasticSquareStream::new(v(&[0.5, 0.0, 0.0, 0.0, 0.0]), 0.1, 0).unwrap();
        assert!((s.residual_bound() - 1.9).abs() < 1e-12);
        let r = s.clone().next().unwrap().rescale_to_unit_lipschitz();
        assert!(r.alpha >= 0.5);
    }

    #[test]
    fn csv_ingestion() {
        let text = "x1,x2,y\n1.0, 2.0, 3.0\n-1,0,0.5\n";
        let rows = read_regression_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], (v(&[-1.0, 0.0]), 0.5));
        match read_regression_csv("a,y\n1,2\nq,3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
