//! Coverage and width indicators for prediction intervals.
//!
//! Every ratio is computed from an exact integer tally followed by a single
//! division, and every mean width from a left-to-right sum followed by a
//! single division, so results are reproducible to the bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step bounds `[lower_t, upper_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct PredictionInterval {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawInterval {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawInterval> for PredictionInterval {
    type Error = Error;

    fn try_from(raw: RawInterval) -> Result<Self> {
        PredictionInterval::new(raw.lower, raw.upper)
    }
}

impl PredictionInterval {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::length("interval upper bounds", lower.len(), upper.len()));
        }
        for (t, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::NonFinite(format!("interval bound at t={t}")));
            }
            if l > u {
                return Err(Error::Config(format!(
                    "interval lower bound {l} exceeds upper bound {u} at t={t}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn width(&self, t: usize) -> f64 {
        self.upper[t] - self.lower[t]
    }

    /// Closed-interval membership: a value equal to a bound is covered.
    pub fn covers(&self, t: usize, value: f64) -> bool {
        self.lower[t] <= value && value <= self.upper[t]
    }
}

/// Provenance of one repeated prediction process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// `S` prediction intervals over the same `T` targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRuns")]
pub struct RunCollection {
    actuals: Vec<f64>,
    runs: Vec<PredictionInterval>,
    meta: Vec<RunMeta>,
}

#[derive(Deserialize)]
struct RawRuns {
    actuals: Vec<f64>,
    runs: Vec<PredictionInterval>,
    #[serde(default)]
    meta: Vec<RunMeta>,
}

impl TryFrom<RawRuns> for RunCollection {
    type Error = Error;

    fn try_from(raw: RawRuns) -> Result<Self> {
        RunCollection::with_meta(raw.actuals, raw.runs, raw.meta)
    }
}

impl RunCollection {
    pub fn new(actuals: Vec<f64>, runs: Vec<PredictionInterval>) -> Result<Self> {
        let meta = (0..runs.len())
            .map(|s| RunMeta {
                seed: s as u64,
                generator: String::from("unspecified"),
                sigma: None,
            })
            .collect();
        Self::with_meta(actuals, runs, meta)
    }

    pub fn with_meta(
        actuals: Vec<f64>,
        runs: Vec<PredictionInterval>,
        meta: Vec<RunMeta>,
    ) -> Result<Self> {
        if actuals.is_empty() {
            return Err(Error::Empty("actuals".into()));
        }
        if runs.is_empty() {
            return Err(Error::Empty("run collection".into()));
        }
        if meta.len() != runs.len() {
            return Err(Error::length("run metadata", runs.len(), meta.len()));
        }
        if let Some(t) = actuals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("actual at t={t}")));
        }
        for run in &runs {
            if run.len() != actuals.len() {
                return Err(Error::length("run interval", actuals.len(), run.len()));
            }
        }
        Ok(Self {
            actuals,
            runs,
            meta,
        })
    }

    pub fn actuals(&self) -> &[f64] {
        &self.actuals
    }

    pub fn runs(&self) -> &[PredictionInterval] {
        &self.runs
    }

    pub fn meta(&self) -> &[RunMeta] {
        &self.meta
    }

    /// Number of repeated processes `S`.
    pub fn num_runs(&self) -> usize {
        self.runs.len()
    }

    /// Number of targets `T`.
    pub fn num_samples(&self) -> usize {
        self.actuals.len()
    }
}

fn check_lengths(actuals: &[f64], interval: &PredictionInterval) -> Result<()> {
    if actuals.is_empty() {
        return Err(Error::Empty("actuals".into()));
    }
    if actuals.len() != interval.len() {
        return Err(Error::length("interval", actuals.len(), interval.len()));
    }
    Ok(())
}

/// Number of targets covered by `interval`.
pub fn coverage_count(actuals: &[f64], interval: &PredictionInterval) -> Result<usize> {
    check_lengths(actuals, interval)?;
    Ok(actuals
        .iter()
        .enumerate()
        .filter(|&(t, &theta)| interval.covers(t, theta))
        .count())
}

/// Empirical coverage probability over all samples.
pub fn ecpas(actuals: &[f64], interval: &PredictionInterval) -> Result<f64> {
    let covered = coverage_count(actuals, interval)?;
    Ok(covered as f64 / actuals.len() as f64)
}

/// Empirical average width over all samples.
pub fn eawapi(interval: &PredictionInterval) -> Result<f64> {
    if interval.is_empty() {
        return Err(Error::Empty("interval".into()));
    }
    let total: f64 = (0..interval.len()).map(|t| interval.width(t)).sum();
    Ok(total / interval.len() as f64)
}

/// `δ^s` for every run.
pub fn delta_per_run(runs: &RunCollection) -> Vec<f64> {
    runs.runs
        .iter()
        .map(|run| ecpas(&runs.actuals, run).expect("validated collection"))
        .collect()
}

/// `ξ^s` for every run.
pub fn xi_per_run(runs: &RunCollection) -> Vec<f64> {
    runs.runs
        .iter()
        .map(|run| eawapi(run).expect("validated collection"))
        .collect()
}

fn count_at_least(values: &[f64], threshold: f64) -> usize {
    values.iter().filter(|&&v| v >= threshold).count()
}

fn count_below(values: &[f64], threshold: f64) -> usize {
    values.iter().filter(|&&v| v < threshold).count()
}

/// Confidence level for an ECPAS threshold: the fraction of runs whose
/// coverage is at least `delta_prime` (ties succeed).
pub fn confidence_level_ecpas(runs: &RunCollection, delta_prime: f64) -> Result<f64> {
    let deltas = delta_per_run(runs);
    Ok(count_at_least(&deltas, delta_prime) as f64 / deltas.len() as f64)
}

/// Confidence level for an EAWAPI threshold: the fraction of runs whose
/// average width is strictly below `xi_prime` (ties fail).
pub fn confidence_level_eawapi(runs: &RunCollection, xi_prime: f64) -> Result<f64> {
    let xis = xi_per_run(runs);
    Ok(count_below(&xis, xi_prime) as f64 / xis.len() as f64)
}

fn check_index(runs: &RunCollection, t: usize) -> Result<()> {
    if t >= runs.num_samples() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: runs.num_samples(),
        });
    }
    Ok(())
}

fn sample_coverage_count(runs: &RunCollection, t: usize) -> usize {
    let theta = runs.actuals[t];
    runs.runs.iter().filter(|run| run.covers(t, theta)).count()
}

/// Coverage rate of target `t` across the repeated runs.
pub fn ecp_one(runs: &RunCollection, t: usize) -> Result<f64> {
    check_index(runs, t)?;
    Ok(sample_coverage_count(runs, t) as f64 / runs.num_runs() as f64)
}

/// Mean width at target `t` across the repeated runs.
pub fn eaw_one(runs: &RunCollection, t: usize) -> Result<f64> {
    check_index(runs, t)?;
    let total: f64 = runs.runs.iter().map(|run| run.width(t)).sum();
    Ok(total / runs.num_runs() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiPoint {
    pub delta_prime: f64,
    pub phi: f64,
    /// Runs with `δ^s ≥ δ′`.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarphiPoint {
    pub xi_prime: f64,
    pub varphi: f64,
    /// Runs with `ξ^s < ξ′`.
    pub count: usize,
}

/// Integer indicator tallies behind the ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    /// `Σ_t c_t` for each run.
    pub covered_per_run: Vec<usize>,
    /// `Σ_s c_s` for each target.
    pub covered_per_sample: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seeds: Vec<u64>,
    #[serde(rename = "S")]
    pub num_runs: usize,
    #[serde(rename = "T")]
    pub num_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// ECPAS of the first run.
    pub delta: f64,
    /// EAWAPI of the first run.
    pub xi: f64,
    pub delta_per_run: Vec<f64>,
    pub xi_per_run: Vec<f64>,
    pub phi_curve: Vec<PhiPoint>,
    pub varphi_curve: Vec<VarphiPoint>,
    pub ecp_per_sample: Vec<f64>,
    pub eaw_per_sample: Vec<f64>,
    pub tallies: Tallies,
    pub meta: ReportMeta,
}

/// Field names of the serialized report, fixed for downstream tooling.
pub const REPORT_FIELDS: [&str; 10] = [
    "delta",
    "xi",
    "delta_per_run",
    "xi_per_run",
    "phi_curve",
    "varphi_curve",
    "ecp_per_sample",
    "eaw_per_sample",
    "tallies",
    "meta",
];

/// `δ′ ∈ {0, 0.01, …, 1}`.
pub fn default_delta_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// 101 evenly spaced points over `[0, 1.1 · max ξ^s]`.
pub fn default_xi_grid(xi_per_run: &[f64]) -> Vec<f64> {
    let max = xi_per_run.iter().copied().fold(0.0, f64::max);
    let span = if max > 0.0 { 1.1 * max } else { 1.0 };
    (0..=100).map(|i| span * i as f64 / 100.0).collect()
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} grid")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!("{name} grid is not sorted ascending")));
    }
    Ok(())
}

pub fn assemble_report(
    runs: &RunCollection,
    delta_grid: &[f64],
    xi_grid: &[f64],
) -> Result<MetricsReport> {
    check_grid("delta_prime", delta_grid)?;
    check_grid("xi_prime", xi_grid)?;

    let s = runs.num_runs();
    let t_len = runs.num_samples();

    let covered_per_run: Vec<usize> = runs
        .runs
        .iter()
        .map(|run| coverage_count(&runs.actuals, run))
        .collect::<Result<_>>()?;
    let delta_per_run: Vec<f64> = covered_per_run
        .iter()
        .map(|&c| c as f64 / t_len as f64)
        .collect();
    let xi_per_run = xi_per_run(runs);

    let phi_curve = delta_grid
        .iter()
        .map(|&delta_prime| {
            let count = count_at_least(&delta_per_run, delta_prime);
            PhiPoint {
                delta_prime,
                phi: count as f64 / s as f64,
                count,
            }
        })
        .collect();
    let varphi_curve = xi_grid
        .iter()
        .map(|&xi_prime| {
            let count = count_below(&xi_per_run, xi_prime);
            VarphiPoint {
                xi_prime,
                varphi: count as f64 / s as f64,
                count,
            }
        })
        .collect();

    let covered_per_sample: Vec<usize> = (0..t_len).map(|t| sample_coverage_count(runs, t)).collect();
    let ecp_per_sample = covered_per_sample
        .iter()
        .map(|&c| c as f64 / s as f64)
        .collect();
    let eaw_per_sample = (0..t_len)
        .map(|t| eaw_one(runs, t))
        .collect::<Result<_>>()?;

    Ok(MetricsReport {
        delta: delta_per_run[0],
        xi: xi_per_run[0],
        delta_per_run,
        xi_per_run,
        phi_curve,
        varphi_curve,
        ecp_per_sample,
        eaw_per_sample,
        tallies: Tallies {
            covered_per_run,
            covered_per_sample,
        },
        meta: ReportMeta {
            seeds: runs.meta.iter().map(|m| m.seed).collect(),
            num_runs: s,
            num_samples: t_len,
        },
    })
}

/// Report over the default grids.
pub fn assemble_default_report(runs: &RunCollection) -> Result<MetricsReport> {
    let xi_grid = default_xi_grid(&xi_per_run(runs));
    assemble_report(runs, &default_delta_grid(), &xi_grid)
}
