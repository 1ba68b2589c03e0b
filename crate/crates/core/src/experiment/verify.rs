//! Re-checking a finished run's telemetry against the closed-form guarantees.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::run::{csv_path, summary_path, SCHEMA_VERSION};
use crate::bounds::{landmark_count_bound, surrogate_regret_bound, taylor_error_bound};
use crate::error::{Error, Result};

/// Slack allowed on the series-error comparison, for the dense reference inverse.
pub const TAYLOR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Parameters outside the range where the guarantee is stated.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub seed: u64,
    pub bound: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<BoundCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<18} {:>24} {:>24}  status", "seed", "bound", "observed", "bound value")?;
        for c in &self.checks {
            let status = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NotApplicable => "n/a",
            };
            writeln!(f, "{:<6} {:<18} {:>24} {:>24}  {status}", c.seed, c.bound, c.lhs, c.rhs)?;
        }
        Ok(())
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name).filter(|x| !x.is_null()).ok_or_else(|| Error::MissingTelemetry(format!("summary field `{name}`")))
}

fn num(v: &Value, name: &str) -> Result<f64> {
    field(v, name)?
        .as_f64()
        .ok_or_else(|| Error::MissingTelemetry(format!("summary field `{name}` is not a number")))
}

fn uint(v: &Value, name: &str) -> Result<u64> {
    field(v, name)?
        .as_u64()
        .ok_or_else(|| Error::MissingTelemetry(format!("summary field `{name}` is not an unsigned integer")))
}

fn status(ok: bool, applicable: bool) -> CheckStatus {
    match (applicable, ok) {
        (false, _) => CheckStatus::NotApplicable,
        (true, true) => CheckStatus::Pass,
        (true, false) => CheckStatus::Fail,
    }
}

struct Columns {
    landmark_sum: u64,
    rows: u64,
}

fn read_columns(path: &Path) -> Result<Columns> {
    let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::MissingTelemetry(format!("{file}: {e}")))?;
    let headers = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingTelemetry(format!("column `{name}` in {file}")))
    };
    let t_col = col("t")?;
    let landmark_col = col("landmark")?;
    let mut out = Columns { landmark_sum: 0, rows: 0 };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let parse = |c: usize, name: &str| -> Result<u64> {
            rec.get(c)
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::Parse { line, message: format!("bad `{name}` value in {file}") })
        };
        let t = parse(t_col, "t")?;
        if t != out.rows + 1 {
            return Err(Error::Parse { line, message: format!("expected round {} in {file}, found {t}", out.rows + 1) });
        }
        out.landmark_sum += parse(landmark_col, "landmark")?;
        out.rows += 1;
    }
    Ok(out)
}

/// Evaluates every implemented bound on the artifacts in `dir`.
pub fn verify_bounds(dir: &Path) -> Result<VerifyReport> {
    let text = std::fs::read_to_string(summary_path(dir))
        .map_err(|e| Error::MissingTelemetry(format!("summary.json in {}: {e}", dir.display())))?;
    let summary: Value = serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    let version = uint(&summary, "schema_version")?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::Config(format!("unsupported summary schema version {version}")));
    }
    let learner = field(&summary, "learner")?.as_str().unwrap_or_default();
    if learner != "oqns" {
        return Err(Error::Config(format!("bound verification covers quasi-Newton runs; this run used `{learner}`")));
    }
    let dim = uint(&summary, "dim")? as usize;
    let horizon = uint(&summary, "horizon")?;
    let eta = num(&summary, "eta")?;
    let beta = num(&summary, "beta")?;
    let c = num(&summary, "c")?;
    let b = num(&summary, "grad_bound")?;
    let order = uint(&summary, "taylor_order")? as usize;
    let regime = eta >= 11.0 && beta <= 0.125;

    let mut checks = Vec::new();
    let seeds = field(&summary, "seeds")?
        .as_array()
        .ok_or_else(|| Error::MissingTelemetry("summary field `seeds` is not a list".into()))?;
    for s in seeds {
        let seed = uint(s, "seed")?;
        let cols = read_columns(&csv_path(dir, seed))?;
        if cols.rows != horizon {
            return Err(Error::Contract(format!("seed {seed}: {} rounds recorded, horizon is {horizon}", cols.rows)));
        }

        let rhs = landmark_count_bound(dim, b, eta, beta, c, horizon);
        let lhs = cols.landmark_sum as f64;
        checks.push(BoundCheck { seed, bound: "landmark_count", lhs, rhs, tolerance: 0.0, status: status(lhs <= rhs, regime) });

        let taylor = field(s, "taylor_checks")?
            .as_array()
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::MissingTelemetry("summary field `taylor_checks` (enable learner.verify_every)".into()))?;
        let mut worst = 0.0f64;
        for check in taylor {
            worst = worst.max(num(check, "error")?);
        }
        let rhs = taylor_error_bound(dim, eta, c, order);
        checks.push(BoundCheck {
            seed,
            bound: "taylor_accuracy",
            lhs: worst,
            rhs,
            tolerance: TAYLOR_TOLERANCE,
            status: status(worst <= rhs + TAYLOR_TOLERANCE, true),
        });

        // Report the comparator closest to violating its bound.
        let comparators = field(s, "comparators")?
            .as_array()
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::MissingTelemetry("summary field `comparators`".into()))?;
        let mut tightest: Option<(f64, f64)> = None;
        for comp in comparators {
            let point = field(comp, "point")?
                .as_array()
                .ok_or_else(|| Error::MissingTelemetry("comparator `point`".into()))?;
            let norm_sq: f64 = point.iter().map(|x| x.as_f64().unwrap_or(f64::NAN).powi(2)).sum();
            let lhs = num(comp, "surrogate_regret")?;
            let rhs = surrogate_regret_bound(dim, eta, beta, b, horizon, norm_sq);
            if tightest.is_none_or(|(l, r)| lhs - rhs > l - r) {
                tightest = Some((lhs, rhs));
            }
        }
        let (lhs, rhs) = tightest.expect("nonempty");
        checks.push(BoundCheck { seed, bound: "surrogate_regret", lhs, rhs, tolerance: 0.0, status: status(lhs <= rhs, regime) });

        let lhs = num(s, "max_inner_norm")?;
        checks.push(BoundCheck { seed, bound: "interiority", lhs, rhs: 1.0, tolerance: 0.0, status: status(lhs < 1.0, true) });
    }
    Ok(VerifyReport { checks })
}
