//! End-to-end experiment orchestration: data preparation, staged training,
//! repeated seeded prediction processes, pattern-diverse generation, a
//! persistence baseline, and report emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctsgan::{CtsganModel, Hyperparams, Stage};
use crate::data::synthetic::SyntheticSpec;
use crate::data::{
    apply_normalization, clip_outliers, load_csv, minmax_fit_normalize, windowize, ClipSpec,
    ConditionSpec, CsvSchema, NormalizationParams, RawSeries, TimeSeriesDataset,
};
use crate::error::{Error, Result};
use crate::intervals::{
    envelope, multi_coverage_and_width, multi_union, write_interval_dump, IntervalRule,
    MultiInterval, ScenarioSet, Units,
};
use crate::metrics::{
    assemble_report, default_delta_grid, default_xi_grid, ecpas, eawapi, xi_per_run,
    MetricsReport, PredictionInterval, RunCollection, RunMeta,
};
use crate::nn::NoiseSpec;
use crate::seed::{self, domain};

/// Where the series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf, schema: CsvSchema },
    /// Generated from the experiment's base seed.
    Synthetic(SyntheticSpec),
}

/// Index ranges into the loaded series: training uses `[0, train_end)`,
/// evaluation `[test_start, test_start + test_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train_end: usize,
    pub test_start: usize,
    /// A multiple of `seq_len`; the test range is covered by consecutive
    /// non-overlapping windows.
    pub test_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSteps {
    pub reconstruction: usize,
    pub supervised: usize,
    pub joint: usize,
}

impl Default for StageSteps {
    fn default() -> Self {
        Self {
            reconstruction: 1000,
            supervised: 1000,
            joint: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub clip: ClipSpec,
    pub split: Split,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub conditions: ConditionSpec,
    /// `seq_len` and `cond_dim` are filled in from the data.
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub training: StageSteps,
    /// Repeated prediction processes `S`.
    #[serde(default = "one")]
    pub runs: usize,
    /// Scenarios per process and window `G`.
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    /// Noise standard deviations for pattern-diverse generation; empty
    /// disables it.
    #[serde(default = "default_sigma_list")]
    pub sigma_list: Vec<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub interval_rule: IntervalRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_units")]
    pub units: Units,
    /// Persistence-baseline noise in original units. Defaults to a tenth
    /// of the training range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_sigma: Option<f64>,
    /// Adversarial fine-tuning rounds run independently in every process.
    #[serde(default)]
    pub fine_tune_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_seq_len() -> usize {
    24
}
fn one() -> usize {
    1
}
fn default_scenarios() -> usize {
    100
}
fn default_sigma_list() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn default_units() -> Units {
    Units::Original
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::Csv { path: csv, .. } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.scenarios == 0 {
            return Err(Error::Config("runs and scenarios must be at least 1".into()));
        }
        if self.seq_len == 0 || self.stride == 0 {
            return Err(Error::Config("seq_len and stride must be positive".into()));
        }
        let Split {
            train_end,
            test_start,
            test_len,
        } = self.split;
        if train_end < self.seq_len {
            return Err(Error::Config(format!(
                "training split of {train_end} points is shorter than seq_len {}",
                self.seq_len
            )));
        }
        if test_start < train_end {
            return Err(Error::Config(format!(
                "test split starts at {test_start}, inside the training split ending at {train_end}"
            )));
        }
        if test_len == 0 || test_len % self.seq_len != 0 {
            return Err(Error::Config(format!(
                "test_len {test_len} must be a positive multiple of seq_len {}",
                self.seq_len
            )));
        }
        if let Some(s) = self.sigma_list.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("sigma {s} must be positive")));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        if let Some(s) = self.baseline_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("baseline_sigma {s} must be non-negative")));
            }
        }
        if let IntervalRule::Quantile { alpha } = self.interval_rule {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("quantile alpha {alpha} must lie in (0, 1)")));
            }
        }
        Hyperparams {
            seq_len: self.seq_len,
            ..self.hyperparams.clone()
        }
        .validate()
    }

    /// Canonical JSON used for hashing and `config.resolved.json`.
    pub fn canonical_json(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.out = None;
        Ok(serde_json::to_string_pretty(&resolved)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }
}

/// Seed of prediction process `s` (1-based).
pub fn run_seed(base: u64, s: usize) -> u64 {
    seed::mix(seed::mix(base, domain::RUNS), s as u64)
}

fn baseline_seed(base: u64, s: usize) -> u64 {
    seed::mix(seed::mix(base, domain::BASELINE), s as u64)
}

/// Everything derived from the data before training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Full series as loaded, before clipping.
    pub series: RawSeries,
    /// Clipped training split.
    pub train: RawSeries,
    pub norm: NormalizationParams,
    pub train_set: TimeSeriesDataset,
    /// Non-overlapping windows covering the test split, normalized with the
    /// training parameters.
    pub test_set: TimeSeriesDataset,
    /// Test targets in the configured units.
    pub actuals: Vec<f64>,
}

pub fn load_series(cfg: &ExperimentConfig) -> Result<RawSeries> {
    match &cfg.data {
        DataSource::Csv { path, schema } => load_csv(path, schema),
        DataSource::Synthetic(spec) => spec.generate(cfg.seed),
    }
}

/// Ingest, clip and normalize the training split, and windowize both
/// splits.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let series = load_series(cfg).map_err(|e| e.in_stage("ingest"))?;
    let Split {
        train_end,
        test_start,
        test_len,
    } = cfg.split;
    if test_start + test_len > series.len() {
        return Err(Error::InsufficientData(format!(
            "test split ends at {} but the series has {} points",
            test_start + test_len,
            series.len()
        ))
        .in_stage("split"));
    }
    let train = clip_outliers(&series.slice(0..train_end)?, &cfg.clip).map_err(|e| e.in_stage("clip"))?;
    let (train_norm, norm) = minmax_fit_normalize(&train).map_err(|e| e.in_stage("normalize"))?;
    let train_set = windowize(&train_norm, &norm, cfg.seq_len, cfg.stride, &cfg.conditions)
        .map_err(|e| e.in_stage("windowize"))?;

    let test_raw = series.slice(test_start..test_start + test_len)?;
    let test_norm = apply_normalization(&test_raw, &norm).map_err(|e| e.in_stage("normalize"))?;
    let test_set = windowize(&test_norm, &norm, cfg.seq_len, cfg.seq_len, &cfg.conditions)
        .map_err(|e| e.in_stage("windowize"))?;
    let actuals = match cfg.units {
        Units::Original => test_raw.values().to_vec(),
        Units::Normalized => test_norm.values.clone(),
    };
    Ok(PreparedData {
        series,
        train,
        norm,
        train_set,
        test_set,
        actuals,
    })
}

/// Hyperparameters with the data-dependent fields filled in.
pub fn resolved_hyperparams(cfg: &ExperimentConfig, data: &PreparedData) -> Hyperparams {
    Hyperparams {
        seq_len: cfg.seq_len,
        cond_dim: data.train_set.cond_dim,
        ..cfg.hyperparams.clone()
    }
}

/// Builds and trains a model up to `until` (inclusive).
pub fn train_model(cfg: &ExperimentConfig, data: &PreparedData, until: Stage) -> Result<CtsganModel> {
    let ds = &data.train_set;
    let mut model = CtsganModel::build(resolved_hyperparams(cfg, data), cfg.seed).map_err(|e| e.in_stage("build"))?;
    model.set_normalization(data.norm.clone());
    if until >= Stage::Reconstruction {
        model
            .train_stage1(ds, cfg.training.reconstruction)
            .map_err(|e| e.in_stage("stage 1"))?;
    }
    if until >= Stage::Supervised {
        model
            .train_stage2(ds, cfg.training.supervised)
            .map_err(|e| e.in_stage("stage 2"))?;
    }
    if until >= Stage::Joint {
        model
            .train_stage3(ds, cfg.training.joint)
            .map_err(|e| e.in_stage("stage 3"))?;
    }
    Ok(model)
}

fn to_units(set: ScenarioSet, norm: &NormalizationParams, units: Units) -> Result<ScenarioSet> {
    match units {
        Units::Original => set.denormalize(norm),
        Units::Normalized => Ok(set),
    }
}

/// Joins per-window scenario blocks along time.
fn join_windows(blocks: Vec<ScenarioSet>) -> Result<ScenarioSet> {
    let mut iter = blocks.into_iter();
    let mut joined = iter.next().ok_or_else(|| Error::Empty("test windows".into()))?;
    for block in iter {
        joined.append_time(&block)?;
    }
    Ok(joined)
}

fn model_norm(model: &CtsganModel, data: &PreparedData) -> NormalizationParams {
    model.normalization().cloned().unwrap_or_else(|| data.norm.clone())
}

/// `G` scenarios over the whole test horizon under one noise pattern.
pub fn generate_horizon(
    model: &CtsganModel,
    data: &PreparedData,
    count: usize,
    noise: &NoiseSpec,
    units: Units,
    seed_value: u64,
) -> Result<ScenarioSet> {
    let blocks = data
        .test_set
        .windows
        .iter()
        .enumerate()
        .map(|(w, win)| model.generate_scenarios(&win.conditions, count, noise, seed::mix(seed_value, w as u64)))
        .collect::<Result<Vec<_>>>()?;
    to_units(join_windows(blocks)?, &model_norm(model, data), units)
}

/// Pattern-diverse scenarios over the whole test horizon.
pub fn pd_generate_horizon(
    model: &CtsganModel,
    data: &PreparedData,
    per_pattern: usize,
    sigma_list: &[f64],
    mu: f64,
    units: Units,
    seed_value: u64,
) -> Result<ScenarioSet> {
    let blocks = data
        .test_set
        .windows
        .iter()
        .enumerate()
        .map(|(w, win)| {
            model.pd_generate(&win.conditions, per_pattern, sigma_list, mu, seed::mix(seed_value, w as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    to_units(join_windows(blocks)?, &model_norm(model, data), units)
}

/// Persistence-plus-noise scenarios: each one is the last `seq_len` points
/// of `history` plus i.i.d. `N(0, σ_b)` per step.
pub fn baseline_generate(
    history: &RawSeries,
    seq_len: usize,
    count: usize,
    sigma_b: f64,
    seed_value: u64,
) -> Result<ScenarioSet> {
    if seq_len == 0 || history.len() < seq_len {
        return Err(Error::InsufficientData(format!(
            "baseline needs {seq_len} points of history, got {}",
            history.len()
        )));
    }
    if count == 0 {
        return Err(Error::Config("scenario count must be positive".into()));
    }
    let normal = Normal::new(0.0, sigma_b).map_err(|e| Error::Config(format!("baseline sigma: {e}")))?;
    let last = &history.values()[history.len() - seq_len..];
    let mut rng = seed::rng(seed_value);
    let scenarios = (0..count)
        .map(|_| last.iter().map(|&v| v + normal.sample(&mut rng)).collect())
        .collect();
    ScenarioSet::single_pattern(scenarios, sigma_b, Units::Original)
}

/// Summary of one pattern within one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub sigma: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRun {
    pub seed: u64,
    pub per_pattern: Vec<PatternSummary>,
    pub union_coverage: f64,
    pub union_width: f64,
    /// Pattern the union is compared against (σ = 1 when listed).
    pub base_sigma: f64,
    pub base_coverage: f64,
    /// Interval built from all patterns' scenarios together.
    pub superset_interval: PredictionInterval,
    pub base_interval: PredictionInterval,
    pub union: MultiInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResults {
    pub sigma_list: Vec<f64>,
    pub runs: Vec<PatternRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResults {
    pub sigma: f64,
    pub report: MetricsReport,
    pub runs: RunCollection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: StageSteps,
    pub final_reconstruction: Option<f64>,
    pub final_supervised: Option<f64>,
    pub final_generator: Option<f64>,
    pub final_discriminator: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub base_seed: u64,
    pub run_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
}

/// The persisted `report.json`: the metrics report at top level, followed
/// by the run collection it was computed from and the auxiliary results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub interval_rule: IntervalRule,
    pub units: Units,
    pub runs: RunCollection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PatternResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ReportDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Recomputes every metric from the stored runs on the stored grids
    /// and fails if anything differs.
    pub fn verify(&self) -> Result<()> {
        let check = |stored: &MetricsReport, runs: &RunCollection, what: &str| -> Result<()> {
            let again = recompute(stored, runs)?;
            if &again != stored {
                return Err(Error::Integrity(format!("{what} metrics differ from their stored runs")));
            }
            Ok(())
        };
        check(&self.metrics, &self.runs, "report")?;
        if let Some(b) = &self.baseline {
            check(&b.report, &b.runs, "baseline")?;
        }
        Ok(())
    }
}

/// Metrics of `runs` on the grids recorded in `stored`.
pub fn recompute(stored: &MetricsReport, runs: &RunCollection) -> Result<MetricsReport> {
    let delta_grid: Vec<f64> = stored.phi_curve.iter().map(|p| p.delta_prime).collect();
    let xi_grid: Vec<f64> = stored.varphi_curve.iter().map(|p| p.xi_prime).collect();
    assemble_report(runs, &delta_grid, &xi_grid)
}

/// Metrics over the configured grids, falling back to the defaults.
pub fn report_for(runs: &RunCollection, delta_grid: Option<&[f64]>, xi_grid: Option<&[f64]>) -> Result<MetricsReport> {
    let delta = delta_grid.map(<[f64]>::to_vec).unwrap_or_else(default_delta_grid);
    let xi = xi_grid
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| default_xi_grid(&xi_per_run(runs)));
    assemble_report(runs, &delta, &xi)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub document: ReportDocument,
    /// Scenarios of the first process (all patterns when enabled).
    pub first_scenarios: ScenarioSet,
    /// Union interval of the first process, or its single-pattern interval.
    pub first_union: MultiInterval,
    pub model: CtsganModel,
    pub wall_time: Duration,
}

impl ExperimentResult {
    pub fn runs(&self) -> &RunCollection {
        &self.document.runs
    }

    pub fn report(&self) -> &MetricsReport {
        &self.document.metrics
    }
}

struct RunOutput {
    interval: PredictionInterval,
    scenarios: ScenarioSet,
    pattern: Option<(PatternRun, ScenarioSet)>,
}

fn pattern_run(
    cfg: &ExperimentConfig,
    model: &CtsganModel,
    data: &PreparedData,
    seed_value: u64,
) -> Result<(PatternRun, ScenarioSet)> {
    let set = pd_generate_horizon(model, data, cfg.scenarios, &cfg.sigma_list, cfg.mu, cfg.units, seed_value)?;
    let per_pattern: Vec<(f64, PredictionInterval)> = cfg
        .sigma_list
        .iter()
        .map(|&s| Ok((s, cfg.interval_rule.apply(&set.group(s)?)?)))
        .collect::<Result<_>>()?;
    let union = multi_union(&per_pattern)?;
    let (union_coverage, union_width) = multi_coverage_and_width(&union, &data.actuals)?;
    let (base_sigma, base_interval) = per_pattern
        .iter()
        .find(|(s, _)| *s == 1.0)
        .unwrap_or(&per_pattern[0])
        .clone();
    let summaries = per_pattern
        .iter()
        .map(|(sigma, iv)| {
            Ok(PatternSummary {
                sigma: *sigma,
                coverage: ecpas(&data.actuals, iv)?,
                width: eawapi(iv)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let run = PatternRun {
        seed: seed_value,
        per_pattern: summaries,
        union_coverage,
        union_width,
        base_sigma,
        base_coverage: ecpas(&data.actuals, &base_interval)?,
        superset_interval: envelope(&set)?,
        base_interval,
        union,
    };
    Ok((run, set))
}

fn one_run(cfg: &ExperimentConfig, model: &CtsganModel, data: &PreparedData, s: usize) -> Result<RunOutput> {
    let seed_value = run_seed(cfg.seed, s);
    let tuned;
    let model = if cfg.fine_tune_steps > 0 {
        let mut m = model.clone();
        m.fine_tune(&data.train_set, cfg.fine_tune_steps, seed_value)?;
        tuned = m;
        &tuned
    } else {
        model
    };
    let noise = NoiseSpec {
        mu: cfg.mu,
        sigma: 1.0,
    };
    let scenarios = generate_horizon(model, data, cfg.scenarios, &noise, cfg.units, seed::mix(seed_value, 0))?;
    let interval = cfg.interval_rule.apply(&scenarios)?;
    let pattern = if cfg.sigma_list.is_empty() {
        None
    } else {
        Some(pattern_run(cfg, model, data, seed::mix(seed_value, 1))?)
    };
    Ok(RunOutput {
        interval,
        scenarios,
        pattern,
    })
}

fn baseline_results(cfg: &ExperimentConfig, data: &PreparedData) -> Result<BaselineResults> {
    let target = data.norm.target();
    let sigma = cfg.baseline_sigma.unwrap_or(0.1 * (target.max - target.min));
    let intervals = (1..=cfg.runs)
        .map(|s| {
            let seed_value = baseline_seed(cfg.seed, s);
            let blocks = data
                .test_set
                .windows
                .iter()
                .enumerate()
                .map(|(w, _)| {
                    let end = cfg.split.test_start + w * cfg.seq_len;
                    let history = data.series.slice(0..end)?;
                    let set = baseline_generate(&history, cfg.seq_len, cfg.scenarios, sigma, seed::mix(seed_value, w as u64))?;
                    match cfg.units {
                        Units::Original => Ok(set),
                        Units::Normalized => {
                            let scenarios = set
                                .scenarios()
                                .iter()
                                .map(|sc| sc.iter().map(|&v| target.normalize(v)).collect())
                                .collect();
                            ScenarioSet::single_pattern(scenarios, sigma, Units::Normalized)
                        }
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            cfg.interval_rule.apply(&join_windows(blocks)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = (1..=cfg.runs)
        .map(|s| RunMeta {
            seed: baseline_seed(cfg.seed, s),
            generator: "persistence".into(),
            sigma: Some(sigma),
        })
        .collect();
    let runs = RunCollection::with_meta(data.actuals.clone(), intervals, meta)?;
    let report = report_for(&runs, cfg.delta_grid.as_deref(), cfg.xi_grid.as_deref())?;
    Ok(BaselineResults { sigma, report, runs })
}

fn last(v: &[f64]) -> Option<f64> {
    v.last().copied()
}

/// Runs the full pipeline. Nothing is written to disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let started = Instant::now();
    let data = prepare(cfg)?;
    let model = train_model(cfg, &data, Stage::Joint)?;
    run_with_model(cfg, &data, model, started)
}

/// The prediction phase on an already trained model.
pub fn run_with_model(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: CtsganModel,
    started: Instant,
) -> Result<ExperimentResult> {
    let outputs = (1..=cfg.runs)
        .into_par_iter()
        .map(|s| one_run(cfg, &model, data, s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("prediction"))?;

    let run_seeds: Vec<u64> = (1..=cfg.runs).map(|s| run_seed(cfg.seed, s)).collect();
    let meta = run_seeds
        .iter()
        .map(|&seed| RunMeta {
            seed,
            generator: "ctsgan".into(),
            sigma: Some(1.0),
        })
        .collect();
    let intervals = outputs.iter().map(|o| o.interval.clone()).collect();
    let runs = RunCollection::with_meta(data.actuals.clone(), intervals, meta).map_err(|e| e.in_stage("metrics"))?;
    let metrics = report_for(&runs, cfg.delta_grid.as_deref(), cfg.xi_grid.as_deref()).map_err(|e| e.in_stage("metrics"))?;

    let patterns = (!cfg.sigma_list.is_empty()).then(|| PatternResults {
        sigma_list: cfg.sigma_list.clone(),
        runs: outputs
            .iter()
            .filter_map(|o| o.pattern.as_ref().map(|(p, _)| p.clone()))
            .collect(),
    });
    let baseline = baseline_results(cfg, data).map_err(|e| e.in_stage("baseline"))?;

    let first = outputs.into_iter().next().expect("runs >= 1");
    let (first_scenarios, first_union) = match first.pattern {
        Some((p, set)) => (set, p.union),
        None => (first.scenarios, MultiInterval::from_interval(&first.interval, 1.0)),
    };

    let traces = model.traces();
    let provenance = Provenance {
        config_hash: cfg.hash()?,
        base_seed: cfg.seed,
        run_seeds,
        training: Some(TrainingSummary {
            steps: cfg.training,
            final_reconstruction: last(&traces.reconstruction),
            final_supervised: last(&traces.supervised),
            final_generator: last(&traces.joint.generator),
            final_discriminator: last(&traces.joint.discriminator),
        }),
    };
    Ok(ExperimentResult {
        config: cfg.clone(),
        document: ReportDocument {
            metrics,
            interval_rule: cfg.interval_rule,
            units: cfg.units,
            runs,
            patterns,
            baseline: Some(baseline),
            provenance: Some(provenance),
        },
        first_scenarios,
        first_union,
        model,
        wall_time: started.elapsed(),
    })
}

/// Writes `t,scenario_index,pattern,value`.
pub fn write_scenarios_csv<W: Write>(writer: W, set: &ScenarioSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "scenario_index", "pattern", "value"])?;
    for (i, (scenario, label)) in set.scenarios().iter().zip(set.labels()).enumerate() {
        for (t, v) in scenario.iter().enumerate() {
            w.write_record([t.to_string(), i.to_string(), label.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("scenarios csv", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct ScenarioRow {
    t: usize,
    scenario_index: usize,
    pattern: f64,
    value: f64,
}

/// Reads a scenario file written by [`write_scenarios_csv`].
pub fn read_scenarios_csv(path: impl AsRef<Path>, units: Units) -> Result<ScenarioSet> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut scenarios: Vec<Vec<Option<f64>>> = Vec::new();
    let mut labels: Vec<Option<f64>> = Vec::new();
    for (row, rec) in reader.deserialize::<ScenarioRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            message: e.to_string(),
        })?;
        if !rec.value.is_finite() {
            return Err(Error::NonFinite(format!("{} row {}", path.display(), row + 1)));
        }
        if rec.scenario_index >= scenarios.len() {
            scenarios.resize(rec.scenario_index + 1, Vec::new());
            labels.resize(rec.scenario_index + 1, None);
        }
        let s = &mut scenarios[rec.scenario_index];
        if rec.t >= s.len() {
            s.resize(rec.t + 1, None);
        }
        if s[rec.t].replace(rec.value).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate value for scenario {} at t={}",
                path.display(),
                rec.scenario_index,
                rec.t
            )));
        }
        match labels[rec.scenario_index] {
            Some(l) if l != rec.pattern => {
                return Err(Error::Format(format!(
                    "{}: scenario {} carries two patterns",
                    path.display(),
                    rec.scenario_index
                )))
            }
            _ => labels[rec.scenario_index] = Some(rec.pattern),
        }
    }
    let horizon = scenarios.iter().map(Vec::len).max().unwrap_or(0);
    let mut full = Vec::with_capacity(scenarios.len());
    for (i, s) in scenarios.into_iter().enumerate() {
        if s.len() != horizon || s.iter().any(Option::is_none) {
            return Err(Error::Format(format!("{}: scenario {i} has gaps", path.display())));
        }
        full.push(s.into_iter().flatten().collect::<Vec<f64>>());
    }
    let labels: Vec<f64> = labels.into_iter().map(|l| l.unwrap_or(1.0)).collect();
    let mut sigma_list: Vec<f64> = Vec::new();
    for l in &labels {
        if !sigma_list.contains(l) {
            sigma_list.push(*l);
        }
    }
    ScenarioSet::new(full, labels, sigma_list, units)
}

/// Writes `t,value`.
pub fn write_actuals_csv<W: Write>(writer: W, actuals: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "value"])?;
    for (t, v) in actuals.iter().enumerate() {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("actuals csv", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct ActualRow {
    t: usize,
    value: f64,
}

pub fn read_actuals_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in reader.deserialize::<ActualRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            message: e.to_string(),
        })?;
        if rec.t != out.len() {
            return Err(Error::Format(format!(
                "{}: expected t={} at row {}, found t={}",
                path.display(),
                out.len(),
                row + 1,
                rec.t
            )));
        }
        out.push(rec.value);
    }
    Ok(out)
}

/// Writes the per-sample diagnostics `t,delta_t,xi_t`.
pub fn write_plot_ecp<W: Write>(writer: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "delta_t", "xi_t"])?;
    for (t, (d, x)) in report.ecp_per_sample.iter().zip(&report.eaw_per_sample).enumerate() {
        w.write_record([t.to_string(), d.to_string(), x.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("plot csv", e))?;
    Ok(())
}

/// Scenario files (one per process) plus actuals → run collection and
/// report.
pub fn evaluate_files(
    scenario_paths: &[PathBuf],
    actuals_path: &Path,
    rule: IntervalRule,
    delta_grid: Option<&[f64]>,
    xi_grid: Option<&[f64]>,
) -> Result<ReportDocument> {
    if scenario_paths.is_empty() {
        return Err(Error::Empty("scenario files".into()));
    }
    let actuals = read_actuals_csv(actuals_path)?;
    let mut intervals = Vec::with_capacity(scenario_paths.len());
    let mut meta = Vec::with_capacity(scenario_paths.len());
    for (s, path) in scenario_paths.iter().enumerate() {
        let set = read_scenarios_csv(path, Units::Original)?;
        if set.horizon() != actuals.len() {
            return Err(Error::length(
                format!("scenario horizon in {}", path.display()),
                actuals.len(),
                set.horizon(),
            ));
        }
        intervals.push(rule.apply(&set)?);
        meta.push(RunMeta {
            seed: s as u64,
            generator: path.display().to_string(),
            sigma: None,
        });
    }
    let runs = RunCollection::with_meta(actuals, intervals, meta)?;
    let metrics = report_for(&runs, delta_grid, xi_grid)?;
    Ok(ReportDocument {
        metrics,
        interval_rule: rule,
        units: Units::Original,
        runs,
        patterns: None,
        baseline: None,
        provenance: None,
    })
}

/// Files written into a directory all at once: they are produced in a
/// sibling staging directory and moved into place only when every file
/// succeeded, so a failure leaves no partial output behind.
pub struct StagedOutput {
    staging: PathBuf,
    target: PathBuf,
    files: Vec<String>,
}

impl StagedOutput {
    pub fn new(target: impl AsRef<Path>) -> Result<Self> {
        let target = target.as_ref().to_path_buf();
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let staging = target.with_file_name(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Self {
            staging,
            target,
            files: Vec::new(),
        })
    }

    /// Writes one file through `fill`.
    pub fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.staging.join(name);
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        let mut written = Vec::new();
        for name in std::mem::take(&mut self.files) {
            let from = self.staging.join(&name);
            let to = self.target.join(&name);
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            written.push(to);
        }
        Ok(written)
    }
}

impl Drop for StagedOutput {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

/// Writes `report.json`, `intervals.csv`, `scenarios.csv`, `plot_ecp.csv`
/// and `config.resolved.json` into `dir`.
pub fn emit_report(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out = StagedOutput::new(dir)?;
    out.write("report.json", |b| {
        b.extend_from_slice(result.document.to_json()?.as_bytes());
        Ok(())
    })?;
    out.write("intervals.csv", |b| write_interval_dump(b, &result.first_union))?;
    out.write("scenarios.csv", |b| write_scenarios_csv(b, &result.first_scenarios))?;
    out.write("plot_ecp.csv", |b| write_plot_ecp(b, &result.document.metrics))?;
    out.write("config.resolved.json", |b| {
        b.extend_from_slice(result.config.canonical_json()?.as_bytes());
        Ok(())
    })?;
    out.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "data": {"synthetic": {"kind": "sine_with_spikes", "length": 400}},
                "split": {"train_end": 300, "test_start": 300, "test_len": 48},
                "seq_len": 24,
                "hyperparams": {"latent_dim": 3, "hidden_dim": 6, "noise_dim": 3, "batch_size": 8},
                "training": {"reconstruction": 20, "supervised": 20, "joint": 10},
                "runs": 3,
                "scenarios": 10,
                "seed": 5
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_keys_and_bad_splits_are_rejected() {
        let bad = r#"{"data": {"synthetic": {"kind": "sine_with_spikes", "length": 10}},
                      "split": {"train_end": 5, "test_start": 5, "test_len": 5}, "sed": 1}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
        let mut cfg = config();
        cfg.split.test_start = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = config();
        cfg.split.test_len = 30;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = config();
        cfg.runs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn split_beyond_data_names_the_stage() {
        let mut cfg = config();
        cfg.split.test_start = 390;
        let err = prepare(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "split", .. }), "{err}");
    }

    #[test]
    fn normalization_is_fit_on_training_split_only() {
        let cfg = config();
        let data = prepare(&cfg).unwrap();
        let train_max = data.train.values().iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(data.norm.target().max, train_max);
        assert_eq!(data.test_set.len(), 2);
        assert_eq!(data.actuals.len(), 48);
        assert_eq!(&data.actuals[..], &data.series.values()[300..348]);
    }

    #[test]
    fn baseline_zero_noise_repeats_the_last_window() {
        let series = SyntheticSpec::sine_with_spikes(50).generate(1).unwrap();
        let set = baseline_generate(&series, 24, 5, 0.0, 3).unwrap();
        for s in set.scenarios() {
            assert_eq!(&s[..], &series.values()[26..]);
        }
        let iv = envelope(&set).unwrap();
        assert!((0..24).all(|t| iv.width(t) == 0.0));
        assert_eq!(set, baseline_generate(&series, 24, 5, 0.0, 3).unwrap());
        assert!(matches!(
            baseline_generate(&series, 60, 5, 1.0, 3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn experiment_report_is_recomputable_and_deterministic() {
        let cfg = config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.document.to_json().unwrap(), b.document.to_json().unwrap());
        a.document.verify().unwrap();
        let back = ReportDocument::from_json(&a.document.to_json().unwrap()).unwrap();
        assert_eq!(back, a.document);
        assert_eq!(a.report().meta.num_runs, 3);
        assert_eq!(a.first_scenarios.len(), 30);
        let patterns = a.document.patterns.as_ref().unwrap();
        for run in &patterns.runs {
            assert!(run.union_coverage >= run.base_coverage);
        }
    }

    #[test]
    fn staged_output_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        {
            let mut out = StagedOutput::new(&target).unwrap();
            out.write("a.txt", |b| {
                b.push(b'x');
                Ok(())
            })
            .unwrap();
            assert!(out.write("b.txt", |_| Err(Error::Empty("nothing".into()))).is_err());
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
