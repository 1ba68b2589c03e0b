//! Experiment configuration: TOML text, key overrides and resolution into runnable parts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::losses::{logistic_alpha, square_alpha, NOISE_TRUNCATION};
use crate::reduction::{ReductionMode, DEFAULT_GAUGE_TOLERANCE};
use crate::sets::{Ball, ConvexSet, Ellipsoid, Hypercube, L1Ball, Polytope};
use crate::stochastic::required_horizon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Online,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    #[default]
    Oqns,
    Ons,
    Ogd,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Oqns => "oqns",
            LearnerKind::Ons => "ons",
            LearnerKind::Ogd => "ogd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Ball,
    Hypercube,
    L1ball,
    Ellipsoid,
    Polytope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionKind {
    Euclidean,
    Gauge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    #[default]
    Square,
    Logistic,
    Portfolio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Adversarial,
    Stochastic,
}

/// `"auto"` or a fixed number of series terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaylorOrderSetting {
    Fixed(usize),
    Named(String),
}

impl Default for TaylorOrderSetting {
    fn default() -> Self {
        TaylorOrderSetting::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default)]
    pub kind: LearnerKind,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Defaults to `min(1/(8B), alpha/2)`.
    pub beta: Option<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Defaults to the gradient budget of the reduction (1, or `1 + sqrt(d)` in gauge mode).
    pub grad_bound: Option<f64>,
    #[serde(default)]
    pub taylor_order: TaylorOrderSetting,
    /// Check the inverse-Hessian series against a dense inverse every this many rounds
    /// (and at round 1); 0 disables.
    #[serde(default = "default_verify_every")]
    pub verify_every: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Oqns,
            eta: default_eta(),
            beta: None,
            c: default_c(),
            grad_bound: None,
            taylor_order: TaylorOrderSetting::default(),
            verify_every: default_verify_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    pub kind: SetKind,
    pub dim: usize,
    /// Ellipsoid semi-axes.
    pub axes: Option<Vec<f64>>,
    /// Polytope constraint file.
    pub path: Option<PathBuf>,
    /// Defaults to euclidean when the set has a projection, gauge otherwise.
    pub reduction: Option<ReductionKind>,
    #[serde(default = "default_gauge_tolerance")]
    pub gauge_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub family: LossFamily,
    /// Defaults to adversarial in online mode and stochastic in stochastic mode.
    pub stream: Option<StreamKind>,
    /// Standard deviation of the label noise (square) or label flip probability (logistic).
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_target_norm")]
    pub target_norm: f64,
    /// Declared exp-concavity of the unit-Lipschitz losses.
    pub alpha: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { family: LossFamily::Square, stream: None, noise: default_noise(), target_norm: default_target_norm(), alpha: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    pub horizon: Option<u64>,
    pub epsilon: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_comparators")]
    pub comparators: usize,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub set: SetConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

fn default_eta() -> f64 {
    11.0
}
fn default_c() -> f64 {
    0.25
}
fn default_verify_every() -> u64 {
    50
}
fn default_gauge_tolerance() -> f64 {
    DEFAULT_GAUGE_TOLERANCE
}
fn default_noise() -> f64 {
    0.1
}
fn default_target_norm() -> f64 {
    0.5
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_comparators() -> usize {
    64
}

/// Default declared exp-concavity of the rescaled square loss: its closed form `1/R` with
/// residual bound `R = 2`, valid whenever labels stay in `[-1, 1]`.
pub const DEFAULT_SQUARE_ALPHA: f64 = 0.5;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key=value` overrides with dotted keys
    /// (`learner.eta=5`). Values are read as TOML, falling back to a bare string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A configuration checked for consistency, with every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub source: ExperimentConfig,
    pub mode: Mode,
    pub learner: LearnerKind,
    pub dim: usize,
    pub horizon: u64,
    pub epsilon: Option<f64>,
    pub seeds: Vec<u64>,
    pub comparators: usize,
    pub set: Arc<dyn ConvexSet>,
    pub reduction: ReductionMode,
    pub eta: f64,
    pub beta: f64,
    pub c: f64,
    pub grad_bound: f64,
    pub taylor_order: Option<usize>,
    pub verify_every: u64,
    pub family: LossFamily,
    pub stream: StreamKind,
    pub noise: f64,
    pub target_norm: f64,
    pub alpha: f64,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn build_set(cfg: &SetConfig) -> Result<Arc<dyn ConvexSet>> {
    let d = cfg.dim;
    if d == 0 {
        return Err(cfg_err("set.dim must be at least 1"));
    }
    let set: Arc<dyn ConvexSet> = match cfg.kind {
        SetKind::Ball => Arc::new(Ball::new(d)),
        SetKind::Hypercube => Arc::new(Hypercube::new(d)),
        SetKind::L1ball => Arc::new(L1Ball::new(d)),
        SetKind::Ellipsoid => {
            let axes = cfg.axes.as_ref().ok_or_else(|| cfg_err("set.axes is required for an ellipsoid"))?;
            if axes.len() != d {
                return Err(cfg_err(format!("set.axes has {} entries but set.dim is {d}", axes.len())));
            }
            Arc::new(Ellipsoid::new(Vector::from_column_slice(axes)).map_err(|e| cfg_err(format!("set.axes: {e}")))?)
        }
        SetKind::Polytope => {
            let path = cfg.path.as_ref().ok_or_else(|| cfg_err("set.path is required for a polytope"))?;
            let poly = Polytope::load(path).map_err(|e| cfg_err(format!("set.path {}: {e}", path.display())))?;
            if poly.dim() != d {
                return Err(cfg_err(format!("polytope file has dimension {} but set.dim is {d}", poly.dim())));
            }
            Arc::new(poly)
        }
    };
    Ok(set)
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let set = build_set(&self.set)?;
        let d = self.set.dim;
        let caps = set.capabilities();

        let reduction = match self.set.reduction {
            Some(ReductionKind::Euclidean) => ReductionMode::EuclideanDistance,
            Some(ReductionKind::Gauge) => ReductionMode::GaugeDistance { tolerance: self.set.gauge_tolerance },
            None if caps.projection => ReductionMode::EuclideanDistance,
            None => ReductionMode::GaugeDistance { tolerance: self.set.gauge_tolerance },
        };
        if !(self.set.gauge_tolerance > 0.0) {
            return Err(cfg_err("set.gauge_tolerance must be positive"));
        }
        let learner = self.learner.kind;
        match learner {
            LearnerKind::Ogd if !caps.projection => {
                return Err(cfg_err(format!("learner ogd needs a projection oracle, which set {} lacks", set.name())))
            }
            LearnerKind::Ogd => {}
            _ => match reduction {
                ReductionMode::EuclideanDistance if !caps.projection => {
                    return Err(cfg_err(format!("euclidean reduction needs a projection oracle, which set {} lacks", set.name())))
                }
                ReductionMode::GaugeDistance { .. } if !set.is_symmetric() => {
                    return Err(cfg_err(format!("gauge reduction needs a centrally symmetric set; {} is not", set.name())))
                }
                _ => {}
            },
        }

        let stream = self.loss.stream.unwrap_or(match self.mode {
            Mode::Online => StreamKind::Adversarial,
            Mode::Stochastic => StreamKind::Stochastic,
        });
        if self.mode == Mode::Stochastic && stream != StreamKind::Stochastic {
            return Err(cfg_err("stochastic mode needs loss.stream = \"stochastic\""));
        }
        let noise = self.loss.noise;
        let target_norm = self.loss.target_norm;
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(cfg_err("loss.noise must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&target_norm) {
            return Err(cfg_err("loss.target_norm must lie in [0, 1]"));
        }
        // Exp-concavity of the unit-Lipschitz losses, in closed form.
        let closed_form = match self.loss.family {
            LossFamily::Portfolio => {
                return Err(cfg_err(
                    "loss.family = \"portfolio\" needs a feasible set inside the positive orthant; none of the bundled sets is",
                ))
            }
            LossFamily::Square => {
                let r = match stream {
                    StreamKind::Adversarial => 2.0,
                    StreamKind::Stochastic => 1.0 + target_norm + NOISE_TRUNCATION * noise,
                };
                square_alpha(r) * 2.0 * r
            }
            LossFamily::Logistic => {
                if self.mode == Mode::Stochastic {
                    return Err(cfg_err("stochastic mode supports the square loss only"));
                }
                if noise > 0.5 {
                    return Err(cfg_err("loss.noise is a flip probability for the logistic loss and must be <= 0.5"));
                }
                logistic_alpha(1.0)
            }
        };
        let alpha = match self.loss.alpha {
            Some(a) if !(a > 0.0) => return Err(cfg_err("loss.alpha must be positive")),
            Some(a) if a > closed_form * (1.0 + 1e-12) => {
                return Err(cfg_err(format!(
                    "loss.alpha = {a} exceeds the exp-concavity {closed_form} of the configured losses"
                )))
            }
            Some(a) => a,
            None if self.loss.family == LossFamily::Square && DEFAULT_SQUARE_ALPHA <= closed_form => DEFAULT_SQUARE_ALPHA,
            None => closed_form,
        };

        let (horizon, epsilon) = match self.mode {
            Mode::Online => {
                if self.epsilon.is_some() {
                    return Err(cfg_err("epsilon applies to stochastic mode only"));
                }
                (self.horizon.ok_or_else(|| cfg_err("online mode needs horizon"))?, None)
            }
            Mode::Stochastic => {
                if self.horizon.is_some() {
                    return Err(cfg_err("stochastic mode derives the horizon from epsilon; remove horizon"));
                }
                let eps = self.epsilon.ok_or_else(|| cfg_err("stochastic mode needs epsilon"))?;
                (required_horizon(d, alpha, eps).map_err(|e| cfg_err(e.to_string()))?, Some(eps))
            }
        };
        if horizon == 0 {
            return Err(cfg_err("horizon must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(cfg_err("seeds must be distinct"));
        }

        let budget = match learner {
            LearnerKind::Ogd => 1.0,
            _ => reduction.gradient_budget(d),
        };
        let grad_bound = self.learner.grad_bound.unwrap_or(budget);
        if grad_bound < budget {
            return Err(cfg_err(format!(
                "learner.grad_bound = {grad_bound} is below the gradient budget {budget} of the reduction"
            )));
        }
        let beta = self.learner.beta.unwrap_or_else(|| (1.0 / (8.0 * grad_bound)).min(alpha / 2.0));
        if !(self.learner.eta >= 1.0) {
            return Err(cfg_err("learner.eta must be at least 1"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(cfg_err("learner.beta must lie in (0, 1)"));
        }
        if !(self.learner.c > 0.0 && self.learner.c < 1.0) {
            return Err(cfg_err("learner.c must lie in (0, 1)"));
        }
        if beta > alpha / 2.0 {
            log::warn!("beta = {beta} exceeds alpha/2 = {}; the surrogate losses may not lower-bound the losses", alpha / 2.0);
        }
        let taylor_order = match &self.learner.taylor_order {
            TaylorOrderSetting::Fixed(0) => return Err(cfg_err("learner.taylor_order must be at least 1")),
            TaylorOrderSetting::Fixed(m) => Some(*m),
            TaylorOrderSetting::Named(s) if s == "auto" => None,
            TaylorOrderSetting::Named(s) => {
                return Err(cfg_err(format!("learner.taylor_order must be \"auto\" or a positive integer, got {s:?}")))
            }
        };
        if self.comparators == 0 {
            return Err(cfg_err("comparators must be at least 1"));
        }

        Ok(ResolvedConfig {
            source: self.clone(),
            mode: self.mode,
            learner,
            dim: d,
            horizon,
            epsilon,
            seeds: self.seeds.clone(),
            comparators: self.comparators,
            set,
            reduction,
            eta: self.learner.eta,
            beta,
            c: self.learner.c,
            grad_bound,
            taylor_order,
            verify_every: self.learner.verify_every,
            family: self.loss.family,
            stream,
            noise,
            target_norm,
            alpha,
        })
    }
}
