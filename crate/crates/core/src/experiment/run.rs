//! Executing a resolved configuration: one learner per seed, per-round telemetry against a
//! fixed comparator grid, and the artifacts written from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LearnerKind, LossFamily, Mode, ResolvedConfig, StreamKind};
use crate::barrier::PotentialParams;
use crate::baselines::{Ogd, Ons, OnsParams};
use crate::bounds::{landmark_count_bound, taylor_error_bound};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::losses::{AdversarialSquareStream, LogisticStream, LossSpec, StochasticSquareStream};
use crate::oqns::{Oqns, OqnsParams, StepInfo, TaylorOrder};
use crate::reduction::{gauge_value, Wrapper};
use crate::sets::ConvexSet;
use crate::stochastic::{excess_risk, mean_and_std_error, IterateAverage, Minimizer, ScaledRisk};

pub const SCHEMA_VERSION: u32 = 1;
const GAUGE_TOL: f64 = 1e-10;

pub const CSV_HEADER: [&str; 8] = ["t", "loss", "surr_reg_inc", "surr_reg_cum", "grad_norm", "landmark", "inversions", "wall_nanos"];

/// One row of the per-round CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub loss: f64,
    pub surr_reg_inc: f64,
    pub surr_reg_cum: f64,
    pub grad_norm: f64,
    pub landmark: bool,
    pub inversions: u64,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorResult {
    pub point: Vec<f64>,
    pub surrogate_regret: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheck {
    pub round: u64,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticOutcome {
    pub target: Vec<f64>,
    pub averaged_point: Vec<f64>,
    pub excess_risk: f64,
    /// `(sum_t f_t(u_t) - f_t(w*)) / T`.
    pub regret_per_round: f64,
}

/// Everything recorded for one seed except the per-round rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub final_surrogate_regret: f64,
    pub landmark_refreshes: u64,
    pub refresh_fraction: f64,
    /// Dense inversions (quasi-Newton) or eigendecompositions (ONS).
    pub inversions: u64,
    pub max_inner_norm: f64,
    pub wall_nanos_total: u64,
    pub wall_nanos_per_round: f64,
    pub taylor_checks: Vec<TaylorCheck>,
    pub comparators: Vec<ComparatorResult>,
    pub stochastic: Option<StochasticOutcome>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticAggregate {
    pub epsilon: f64,
    pub excess_risk_mean: f64,
    pub excess_risk_std_error: f64,
    pub regret_per_round_mean: f64,
    pub regret_per_round_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub learner: String,
    pub mode: String,
    pub set: String,
    pub reduction: String,
    pub loss: String,
    pub dim: usize,
    pub horizon: u64,
    pub eta: f64,
    pub beta: f64,
    pub c: f64,
    pub grad_bound: f64,
    pub alpha: f64,
    pub taylor_order: Option<usize>,
    pub landmark_bound: Option<f64>,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_regret: f64,
    pub mean_final_surrogate_regret: f64,
    pub stochastic: Option<StochasticAggregate>,
    pub config: ExperimentConfig,
}

fn primes(count: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(count);
    let mut n = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= n).all(|&p| n % p != 0) {
            out.push(n);
        }
        n += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// `count` Halton points of `[-1, 1]^d`, pulled radially into the set, then scaled by
/// `1 - 1/T`.
pub fn comparator_grid(set: &dyn ConvexSet, count: usize, horizon: u64, tol: f64) -> Result<Vec<Vector>> {
    let d = set.dim();
    let bases = primes(d);
    let shrink = 1.0 - 1.0 / horizon as f64;
    (1..=count as u64)
        .map(|k| {
            let h = Vector::from_fn(d, |j, _| 2.0 * radical_inverse(k, bases[j]) - 1.0);
            let g = gauge_value(set, &h, tol)?;
            let p = if g > 1.0 { h / g } else { h };
            Ok(p * shrink)
        })
        .collect()
}

fn target_in_set(set: &dyn ConvexSet, norm: f64, seed: u64, tol: f64) -> Result<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a3c_91e5_d2b4_0f68);
    let dir = loop {
        let v = Vector::from_fn(set.dim(), |_, _| StandardNormal.sample(&mut rng));
        if v.norm() > 1e-12 {
            break v.normalize();
        }
    };
    let t = dir * norm;
    let g = gauge_value(set, &t, tol)?;
    Ok(if g > 1.0 { t / g } else { t })
}

struct Step {
    played: Vector,
    inner_point: Vector,
    g: Vector,
    landmark: bool,
    inversions: u64,
    info: Option<StepInfo>,
    inner_next_norm: f64,
}

enum Learner {
    Oqns(Wrapper<Oqns>),
    Ons(Wrapper<Ons>),
    Ogd(Ogd),
}

impl Learner {
    fn new(cfg: &ResolvedConfig) -> Result<Self> {
        Ok(match cfg.learner {
            LearnerKind::Oqns => {
                let potential = PotentialParams::new(cfg.dim, cfg.eta, cfg.beta, cfg.grad_bound)?;
                let order = cfg.taylor_order.map_or(TaylorOrder::Auto, TaylorOrder::Fixed);
                let params = OqnsParams::new(potential, cfg.c, order, cfg.horizon)?;
                Learner::Oqns(Wrapper::new(Oqns::new(params)?, cfg.set.clone(), cfg.reduction)?)
            }
            LearnerKind::Ons => {
                let params = OnsParams { dim: cfg.dim, alpha: cfg.alpha, grad_bound: cfg.grad_bound, diameter: 2.0 };
                Learner::Ons(Wrapper::new(Ons::new(params)?, cfg.set.clone(), cfg.reduction)?)
            }
            LearnerKind::Ogd => Learner::Ogd(Ogd::new(cfg.set.clone(), 2.0, 1.0)?),
        })
    }

    fn round(&mut self, loss: &LossSpec) -> Result<Step> {
        match self {
            Learner::Oqns(w) => {
                let r = w.round(|u| loss.subgradient(u))?;
                let oqns = w.inner();
                Ok(Step {
                    played: r.played,
                    inner_point: r.inner_point,
                    g: r.g,
                    landmark: r.inner.landmark_refreshed,
                    inversions: oqns.full_inversions(),
                    inner_next_norm: r.inner.next.norm(),
                    info: Some(r.inner),
                })
            }
            Learner::Ons(w) => {
                let r = w.round(|u| loss.subgradient(u))?;
                Ok(Step {
                    played: r.played,
                    inner_point: r.inner_point,
                    g: r.g,
                    landmark: false,
                    inversions: w.inner().eigendecompositions(),
                    inner_next_norm: w.inner().iterate().norm(),
                    info: None,
                })
            }
            Learner::Ogd(o) => {
                let u = o.iterate().clone();
                let zeta = loss.subgradient(&u)?;
                let zn = zeta.norm();
                if zn > 1.0 + 1e-12 {
                    return Err(Error::AssumptionViolation(format!("loss subgradient norm {zn} exceeds 1")));
                }
                o.step(&zeta)?;
                Ok(Step {
                    inner_point: u.clone(),
                    played: u,
                    g: zeta,
                    landmark: false,
                    inversions: 0,
                    inner_next_norm: o.iterate().norm(),
                    info: None,
                })
            }
        }
    }

    fn taylor_check(&self, info: &StepInfo) -> Result<Option<TaylorCheck>> {
        let Learner::Oqns(w) = self else { return Ok(None) };
        let oqns = w.inner();
        let p = &oqns.params().potential;
        Ok(Some(TaylorCheck {
            round: info.round,
            error: oqns.taylor_error(info)?,
            bound: taylor_error_bound(p.dim(), p.eta(), oqns.params().landmark_threshold, oqns.taylor_order()),
        }))
    }

    fn taylor_order(&self) -> Option<usize> {
        match self {
            Learner::Oqns(w) => Some(w.inner().taylor_order()),
            _ => None,
        }
    }
}

/// Runs one seed.
pub fn run_seed(cfg: &ResolvedConfig, grid: &[Vector], seed: u64) -> Result<SeedRun> {
    let tol = GAUGE_TOL;
    let mut stochastic_model = None;
    let mut comparators: Vec<Vector> = grid.to_vec();
    let stream: Box<dyn Iterator<Item = LossSpec>> = match (cfg.family, cfg.stream) {
        (LossFamily::Square, StreamKind::Adversarial) => {
            Box::new(AdversarialSquareStream::new(cfg.dim, cfg.target_norm, seed)?)
        }
        (LossFamily::Square, StreamKind::Stochastic) => {
            let target = target_in_set(cfg.set.as_ref(), cfg.target_norm, seed, tol)?;
            let s = StochasticSquareStream::new(target.clone(), cfg.noise, seed)?;
            comparators.push(target);
            stochastic_model = Some(s.clone());
            Box::new(s)
        }
        (LossFamily::Logistic, _) => {
            let target = target_in_set(cfg.set.as_ref(), 1.0, seed, tol)?;
            Box::new(LogisticStream::new(target, cfg.noise, seed)?)
        }
        (LossFamily::Portfolio, _) => return Err(Error::Config("portfolio losses are not runnable here".into())),
    };

    let mut learner = Learner::new(cfg)?;
    let beta = cfg.beta;
    let mut surrogate = vec![0.0f64; comparators.len()];
    let mut regret = vec![0.0f64; comparators.len()];
    let mut records = Vec::with_capacity(cfg.horizon as usize);
    let mut taylor_checks = Vec::new();
    let mut average = IterateAverage::new(cfg.dim);
    let mut cum = 0.0f64;
    let mut refreshes = 0u64;
    let mut inversions = 0u64;
    let mut max_inner_norm = 0.0f64;
    let mut wall_total = 0u64;

    for (idx, spec) in stream.take(cfg.horizon as usize).enumerate() {
        let t = idx as u64 + 1;
        let loss = spec.rescale_to_unit_lipschitz();
        let start = Instant::now();
        let step = learner.round(&loss)?;
        let nanos = start.elapsed().as_nanos() as u64;
        wall_total += nanos;

        if cfg.verify_every > 0 && (t == 1 || t % cfg.verify_every == 0) {
            if let Some(info) = &step.info {
                if let Some(check) = learner.taylor_check(info)? {
                    taylor_checks.push(check);
                }
            }
        }

        let f_u = loss.value(&step.played)?;
        for (k, v) in comparators.iter().enumerate() {
            let z = step.g.dot(&(&step.inner_point - v));
            surrogate[k] += z - 0.5 * beta * z * z;
            regret[k] += f_u - loss.value(v)?;
        }
        let best = surrogate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inc = best - cum;
        cum += inc;

        max_inner_norm = max_inner_norm.max(step.inner_point.norm()).max(step.inner_next_norm);
        refreshes += u64::from(step.landmark);
        inversions = step.inversions;
        average.push(&step.played);
        records.push(RoundRecord {
            t,
            loss: f_u,
            surr_reg_inc: inc,
            surr_reg_cum: cum,
            grad_norm: step.g.norm(),
            landmark: step.landmark,
            inversions,
            wall_nanos: nanos,
        });
    }
    if (records.len() as u64) < cfg.horizon {
        return Err(Error::Contract("loss stream ended early".into()));
    }

    let stochastic = match stochastic_model {
        Some(model) => {
            let target = comparators.last().expect("target appended").clone();
            let lipschitz = model.lipschitz_bound();
            let risk = ScaledRisk { inner: model, scale: 1.0 / lipschitz };
            let avg = average.mean()?;
            Some(StochasticOutcome {
                excess_risk: excess_risk(&risk, &avg, Minimizer::Known(&target))?,
                regret_per_round: regret.last().copied().unwrap_or(0.0) / cfg.horizon as f64,
                target: target.iter().copied().collect(),
                averaged_point: avg.iter().copied().collect(),
            })
        }
        None => None,
    };

    let summary = SeedSummary {
        seed,
        final_regret: regret.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        final_surrogate_regret: cum,
        landmark_refreshes: refreshes,
        refresh_fraction: refreshes as f64 / cfg.horizon as f64,
        inversions,
        max_inner_norm,
        wall_nanos_total: wall_total,
        wall_nanos_per_round: wall_total as f64 / cfg.horizon as f64,
        taylor_checks,
        comparators: comparators
            .iter()
            .zip(surrogate.iter().zip(&regret))
            .map(|(p, (&s, &r))| ComparatorResult { point: p.iter().copied().collect(), surrogate_regret: s, regret: r })
            .collect(),
        stochastic,
    };
    Ok(SeedRun { summary, records })
}

fn reduction_name(cfg: &ResolvedConfig) -> &'static str {
    match (cfg.learner, cfg.reduction.is_gauge()) {
        (LearnerKind::Ogd, _) => "projection",
        (_, true) => "gauge",
        (_, false) => "euclidean",
    }
}

/// Runs every seed (in parallel) and aggregates. Results are in seed order.
pub fn execute(cfg: &ResolvedConfig) -> Result<(RunSummary, Vec<SeedRun>)> {
    let grid = comparator_grid(cfg.set.as_ref(), cfg.comparators, cfg.horizon, GAUGE_TOL)?;
    let runs: Vec<SeedRun> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, &grid, s)).collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let stochastic = match (cfg.mode, cfg.epsilon) {
        (Mode::Stochastic, Some(eps)) => {
            let excess: Vec<f64> = runs.iter().filter_map(|r| r.summary.stochastic.as_ref().map(|s| s.excess_risk)).collect();
            let reg: Vec<f64> = runs.iter().filter_map(|r| r.summary.stochastic.as_ref().map(|s| s.regret_per_round)).collect();
            let (em, es) = mean_and_std_error(&excess);
            let (rm, rs) = mean_and_std_error(&reg);
            Some(StochasticAggregate {
                epsilon: eps,
                excess_risk_mean: em,
                excess_risk_std_error: es,
                regret_per_round_mean: rm,
                regret_per_round_std_error: rs,
            })
        }
        _ => None,
    };
    let taylor_order = match cfg.learner {
        LearnerKind::Oqns => Some(Learner::new(cfg)?.taylor_order().expect("oqns")),
        _ => None,
    };
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        learner: cfg.learner.name().into(),
        mode: match cfg.mode {
            Mode::Online => "online".into(),
            Mode::Stochastic => "stochastic".into(),
        },
        set: cfg.set.name().into(),
        reduction: reduction_name(cfg).into(),
        loss: format!("{:?}", cfg.family).to_lowercase(),
        dim: cfg.dim,
        horizon: cfg.horizon,
        eta: cfg.eta,
        beta: cfg.beta,
        c: cfg.c,
        grad_bound: cfg.grad_bound,
        alpha: cfg.alpha,
        taylor_order,
        landmark_bound: (cfg.learner == LearnerKind::Oqns)
            .then(|| landmark_count_bound(cfg.dim, cfg.grad_bound, cfg.eta, cfg.beta, cfg.c, cfg.horizon)),
        mean_final_regret: runs.iter().map(|r| r.summary.final_regret).sum::<f64>() / n,
        mean_final_surrogate_regret: runs.iter().map(|r| r.summary.final_surrogate_regret).sum::<f64>() / n,
        seeds: runs.iter().map(|r| r.summary.clone()).collect(),
        stochastic,
        config: cfg.source.clone(),
    };
    Ok((summary, runs))
}

pub fn csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("rounds_seed{seed}.csv"))
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

pub fn write_rounds_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            format!("{}", r.loss),
            format!("{}", r.surr_reg_inc),
            format!("{}", r.surr_reg_cum),
            format!("{}", r.grad_norm),
            u8::from(r.landmark).to_string(),
            r.inversions.to_string(),
            r.wall_nanos.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-seed CSV files and `summary.json` into `dir`.
pub fn write_artifacts(dir: &Path, summary: &RunSummary, runs: &[SeedRun]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in runs {
        write_rounds_csv(&csv_path(dir, run.summary.seed), &run.records)?;
    }
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(summary_path(dir), json + "\n")?;
    Ok(())
}

/// `runs/<learner>-<unix seconds>`.
pub fn default_output_dir(learner: LearnerKind) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    PathBuf::from("runs").join(format!("{}-{secs}", learner.name()))
}

/// Resolves, runs and writes artifacts. Returns the summary and the directory used.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunSummary, PathBuf)> {
    let cfg = config.resolve()?;
    let dir = config.output_dir.clone().unwrap_or_else(|| default_output_dir(cfg.learner));
    let (summary, runs) = execute(&cfg)?;
    write_artifacts(&dir, &summary, &runs)?;
    Ok((summary, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::{Hypercube, L1Ball};

    fn config(extra: &[&str]) -> ResolvedConfig {
        let base = "horizon = 200\nseeds = [1, 2]\ncomparators = 16\n[set]\nkind = \"ball\"\ndim = 3\n";
        let ov: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml_with_overrides(base, &ov).unwrap().resolve().unwrap()
    }

    #[test]
    fn halton_points() {
        assert_eq!(primes(5), vec![2, 3, 5, 7, 11]);
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn grid_lies_in_shrunk_set() {
        let t = 100;
        for set in [Box::new(Hypercube::new(4)) as Box<dyn ConvexSet>, Box::new(L1Ball::new(4))] {
            let grid = comparator_grid(set.as_ref(), 64, t, 1e-10).unwrap();
            assert_eq!(grid.len(), 64);
            for p in &grid {
                assert!(set.contains(&(p / (1.0 - 1.0 / t as f64))));
                assert!(p.norm() <= 1.0 - 1.0 / t as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn cumulative_column_is_exact_prefix_sum() {
        let (_, runs) = execute(&config(&[])).unwrap();
        for run in &runs {
            let mut acc = 0.0;
            for r in &run.records {
                acc += r.surr_reg_inc;
                assert_eq!(acc, r.surr_reg_cum);
            }
            assert_eq!(run.records.len(), 200);
        }
    }

    #[test]
    fn execution_is_deterministic() {
        let cfg = config(&[]);
        let (_, a) = execute(&cfg).unwrap();
        let (_, b) = execute(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let strip = |r: &RoundRecord| RoundRecord { wall_nanos: 0, ..r.clone() };
            assert_eq!(x.records.iter().map(strip).collect::<Vec<_>>(), y.records.iter().map(strip).collect::<Vec<_>>());
        }
    }

    #[test]
    fn all_learners_run_on_all_sets() {
        for set in ["ball", "hypercube", "l1ball"] {
            for learner in ["oqns", "ons", "ogd"] {
                let kind = format!("set.kind={set}");
                let l = format!("learner.kind={learner}");
                let (summary, runs) = execute(&config(&[&kind, &l])).unwrap();
                assert_eq!(summary.learner, learner);
                for run in &runs {
                    assert!(run.summary.final_regret.is_finite());
                }
            }
        }
        let (summary, _) = execute(&config(&["set.kind=hypercube", "set.reduction=gauge"])).unwrap();
        assert_eq!(summary.reduction, "gauge");
        let (_, runs) = execute(&config(&["loss.family=logistic"])).unwrap();
        assert!(runs[0].summary.final_regret.is_finite());
    }

    #[test]
    fn ons_counts_eigendecompositions() {
        let (_, runs) = execute(&config(&["learner.kind=ons"])).unwrap();
        assert_eq!(runs[0].summary.inversions, 200);
    }

    #[test]
    fn stochastic_mode_reports_excess_risk() {
        let base = "mode = \"stochastic\"\nepsilon = 0.2\nseeds = [1, 2]\ncomparators = 16\n[set]\nkind = \"ball\"\ndim = 2\n";
        let cfg = ExperimentConfig::from_toml_str(base).unwrap().resolve().unwrap();
        let (summary, runs) = execute(&cfg).unwrap();
        let agg = summary.stochastic.unwrap();
        assert!(agg.excess_risk_mean >= 0.0);
        assert_eq!(runs[0].summary.comparators.len(), 17);
    }
}
