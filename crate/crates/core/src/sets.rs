//! Feasible sets exposed through membership, separation and projection oracles.
//!
//! The bundled centrally symmetric sets are scaled at construction so that
//! `B(1/sqrt(d)) ⊆ C ⊆ B(1)`. The `*_unchecked` constructors skip that scaling.

use std::fmt::Debug;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub membership: bool,
    pub separation: bool,
    pub projection: bool,
}

/// Hyperplane `<normal, v> <= offset` valid for the whole set and violated by the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub normal: Vector,
    pub offset: f64,
}

pub trait ConvexSet: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    /// `C = -C`.
    fn is_symmetric(&self) -> bool;
    /// Closed membership test; the boundary counts as inside.
    fn contains(&self, x: &Vector) -> bool;
    /// `None` when `x` belongs to the set, otherwise a strict separator.
    fn separate(&self, x: &Vector) -> Option<Separator>;
    /// Euclidean projection.
    fn project(&self, _x: &Vector) -> Result<Vector> {
        Err(Error::Unsupported("projection"))
    }
}

fn full_caps() -> Capabilities {
    Capabilities { membership: true, separation: true, projection: true }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Euclidean ball of the given radius around the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    dim: usize,
    radius: f64,
}

impl Ball {
    /// The unit ball.
    pub fn new(dim: usize) -> Self {
        Self { dim, radius: 1.0 }
    }

    pub fn with_radius_unchecked(dim: usize, radius: f64) -> Self {
        Self { dim, radius }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl ConvexSet for Ball {
    fn name(&self) -> &'static str {
        "ball"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn capabilities(&self) -> Capabilities {
        full_caps()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn contains(&self, x: &Vector) -> bool {
        x.norm() <= self.radius
    }
    fn separate(&self, x: &Vector) -> Option<Separator> {
        let n = x.norm();
        (n > self.radius).then(|| Separator { normal: x / n, offset: self.radius })
    }
    fn project(&self, x: &Vector) -> Result<Vector> {
        let n = x.norm();
        if n <= self.radius {
            return Ok(x.clone());
        }
        let mut y = x * (self.radius / n);
        // Rounding can leave the rescaled point a few ulps outside.
        while y.norm() > self.radius {
            y *= 1.0 - f64::EPSILON;
        }
        Ok(y)
    }
}

/// `[-a, a]^d`; [`Hypercube::new`] uses `a = 1/sqrt(d)` so the corners touch the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    dim: usize,
    half_width: f64,
}

impl Hypercube {
    pub fn new(dim: usize) -> Self {
        Self { dim, half_width: 1.0 / (dim as f64).sqrt() }
    }

    pub fn with_half_width_unchecked(dim: usize, half_width: f64) -> Self {
        Self { dim, half_width }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
}

impl ConvexSet for Hypercube {
    fn name(&self) -> &'static str {
        "hypercube"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn capabilities(&self) -> Capabilities {
        full_caps()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn contains(&self, x: &Vector) -> bool {
        x.amax() <= self.half_width
    }
    fn separate(&self, x: &Vector) -> Option<Separator> {
        let j = x.iamax();
        if x[j].abs() <= self.half_width {
            return None;
        }
        let mut normal = Vector::zeros(self.dim);
        normal[j] = sign(x[j]);
        Some(Separator { normal, offset: self.half_width })
    }
    fn project(&self, x: &Vector) -> Result<Vector> {
        let a = self.half_width;
        Ok(x.map(|v| v.clamp(-a, a)))
    }
}

/// `{x : |x|_1 <= r}`; [`L1Ball::new`] uses `r = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Ball {
    dim: usize,
    radius: f64,
}

impl L1Ball {
    pub fn new(dim: usize) -> Self {
        Self { dim, radius: 1.0 }
    }

    pub fn with_radius_unchecked(dim: usize, radius: f64) -> Self {
        Self { dim, radius }
    }
}

impl ConvexSet for L1Ball {
    fn name(&self) -> &'static str {
        "l1ball"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn capabilities(&self) -> Capabilities {
        full_caps()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn contains(&self, x: &Vector) -> bool {
        x.lp_norm(1) <= self.radius
    }
    fn separate(&self, x: &Vector) -> Option<Separator> {
        if x.lp_norm(1) <= self.radius {
            return None;
        }
        Some(Separator { normal: x.map(sign), offset: self.radius })
    }
    /// Sort-based projection onto the simplex of absolute values.
    fn project(&self, x: &Vector) -> Result<Vector> {
        if x.lp_norm(1) <= self.radius {
            return Ok(x.clone());
        }
        let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let mut cumsum = 0.0;
        let mut theta = 0.0;
        for (j, &m) in mags.iter().enumerate() {
            cumsum += m;
            let candidate = (cumsum - self.radius) / (j + 1) as f64;
            if m - candidate > 0.0 {
                theta = candidate;
            } else {
                break;
            }
        }
        let mut y = x.map(|v| sign(v) * (v.abs() - theta).max(0.0));
        while y.lp_norm(1) > self.radius {
            y *= 1.0 - f64::EPSILON;
        }
        Ok(y)
    }
}

/// Axis-aligned ellipsoid `{x : sum x_i^2 / a_i^2 <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    semi_axes: Vector,
}

impl Ellipsoid {
    /// Requires every semi-axis in `[1/sqrt(d), 1]`.
    pub fn new(semi_axes: Vector) -> Result<Self> {
        let d = semi_axes.len();
        if d == 0 {
            return Err(Error::InvalidParams("ellipsoid needs at least one axis".into()));
        }
        let lo = 1.0 / (d as f64).sqrt();
        if let Some(a) = semi_axes.iter().find(|&&a| !(a >= lo - 1e-15 && a <= 1.0)) {
            return Err(Error::InvalidParams(format!(
                "semi-axis {a} outside [1/sqrt(d), 1] = [{lo}, 1]"
            )));
        }
        Ok(Self { semi_axes })
    }

    pub fn new_unchecked(semi_axes: Vector) -> Self {
        Self { semi_axes }
    }

    fn quad(&self, x: &Vector) -> f64 {
        x.iter().zip(self.semi_axes.iter()).map(|(v, a)| (v / a).powi(2)).sum()
    }
}

impl ConvexSet for Ellipsoid {
    fn name(&self) -> &'static str {
        "ellipsoid"
    }
    fn dim(&self) -> usize {
        self.semi_axes.len()
    }
    fn capabilities(&self) -> Capabilities {
        full_caps()
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn contains(&self, x: &Vector) -> bool {
        self.quad(x) <= 1.0
    }
    fn separate(&self, x: &Vector) -> Option<Separator> {
        let q = self.quad(x);
        if q <= 1.0 {
            return None;
        }
        let normal = x.component_div(&self.semi_axes.component_mul(&self.semi_axes));
        Some(Separator { normal, offset: q.sqrt() })
    }
    /// Newton's method on the multiplier of the single constraint.
    fn project(&self, x: &Vector) -> Result<Vector> {
        if self.contains(x) {
            return Ok(x.clone());
        }
        let a2 = self.semi_axes.component_mul(&self.semi_axes);
        // f(mu) = sum x_i^2 a_i^2 / (a_i^2 + mu)^2 - 1 is convex and decreasing on mu >= 0,
        // so Newton from mu = 0 increases monotonically to the root.
        let mut mu = 0.0f64;
        for _ in 0..200 {
            let mut f = -1.0;
            let mut df = 0.0;
            for (xi, ai2) in x.iter().zip(a2.iter()) {
                let den = ai2 + mu;
                let t = xi * xi * ai2 / (den * den);
                f += t;
                df -= 2.0 * t / den;
            }
            if f.abs() <= 1e-15 || df == 0.0 {
                break;
            }
            let next = mu - f / df;
            if (next - mu).abs() <= 1e-16 * mu.max(1e-300) {
                mu = next;
                break;
            }
            mu = next;
        }
        let y = Vector::from_fn(x.len(), |i, _| a2[i] * x[i] / (a2[i] + mu));
        // Clear residual rounding so the returned point passes the closed membership test.
        let mut y = y;
        while self.quad(&y) > 1.0 {
            y *= 1.0 - f64::EPSILON;
        }
        Ok(y)
    }
}

/// `{x : <a_i, x> <= b_i for all i}`. Projection is not offered.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    dim: usize,
    normals: Vec<Vector>,
    offsets: Vec<f64>,
    symmetric: bool,
}

impl Polytope {
    pub fn new(normals: Vec<Vector>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidParams(
                "polytope needs a matching, nonempty list of constraints".into(),
            ));
        }
        let dim = normals[0].len();
        if dim == 0 || normals.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidParams("constraint normals disagree in dimension".into()));
        }
        let symmetric = normals.iter().zip(&offsets).all(|(a, b)| {
            normals
                .iter()
                .zip(&offsets)
                .any(|(a2, b2)| (a + a2).amax() <= 1e-12 && (b - b2).abs() <= 1e-12)
        });
        Ok(Self { dim, normals, offsets, symmetric })
    }

    /// Parses one constraint per line, `a_1 ... a_d b` meaning `<a, x> <= b`.
    /// `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        let mut width = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let values = body
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("not a number: {tok:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() < 2 {
                return Err(Error::Parse { line, message: "need at least one coefficient and a bound".into() });
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {w} fields, found {}", values.len()),
                    })
                }
                _ => {}
            }
            let (b, a) = values.split_last().expect("nonempty");
            normals.push(Vector::from_column_slice(a));
            offsets.push(*b);
        }
        if normals.is_empty() {
            return Err(Error::Parse { line: 0, message: "no constraints found".into() });
        }
        Self::new(normals, offsets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn constraints(&self) -> impl Iterator<Item = (&Vector, f64)> {
        self.normals.iter().zip(self.offsets.iter().copied())
    }
}

impl ConvexSet for Polytope {
    fn name(&self) -> &'static str {
        "polytope"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { membership: true, separation: true, projection: false }
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn contains(&self, x: &Vector) -> bool {
        self.constraints().all(|(a, b)| a.dot(x) <= b)
    }
    fn separate(&self, x: &Vector) -> Option<Separator> {
        let (i, viol) = self
            .constraints()
            .map(|(a, b)| a.dot(x) - b)
            .enumerate()
            .max_by(|l, r| l.1.total_cmp(&r.1))?;
        (viol > 0.0).then(|| Separator { normal: self.normals[i].clone(), offset: self.offsets[i] })
    }
}
