//! Scenario sets and the rules that turn them into intervals.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationParams;
use crate::error::{Error, Result};
use crate::metrics::PredictionInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Normalized,
    Original,
}

/// `G` trajectories of equal length, each tagged with the noise pattern
/// (standard deviation) that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    scenarios: Vec<Vec<f64>>,
    labels: Vec<f64>,
    sigma_list: Vec<f64>,
    units: Units,
}

impl ScenarioSet {
    pub fn new(
        scenarios: Vec<Vec<f64>>,
        labels: Vec<f64>,
        sigma_list: Vec<f64>,
        units: Units,
    ) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::Empty("scenario set".into()));
        }
        if labels.len() != scenarios.len() {
            return Err(Error::length("scenario labels", scenarios.len(), labels.len()));
        }
        let horizon = scenarios[0].len();
        for s in &scenarios {
            if s.len() != horizon {
                return Err(Error::length("scenario trajectory", horizon, s.len()));
            }
        }
        if let Some(label) = labels.iter().find(|l| !sigma_list.contains(l)) {
            return Err(Error::Config(format!(
                "scenario label {label} is not in the declared pattern list"
            )));
        }
        Ok(Self {
            scenarios,
            labels,
            sigma_list,
            units,
        })
    }

    /// All scenarios tagged with a single pattern.
    pub fn single_pattern(scenarios: Vec<Vec<f64>>, sigma: f64, units: Units) -> Result<Self> {
        let labels = vec![sigma; scenarios.len()];
        Self::new(scenarios, labels, vec![sigma], units)
    }

    pub fn scenarios(&self) -> &[Vec<f64>] {
        &self.scenarios
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sigma_list(&self) -> &[f64] {
        &self.sigma_list
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.scenarios[0].len()
    }

    /// The sub-set generated under pattern `sigma`.
    pub fn group(&self, sigma: f64) -> Result<ScenarioSet> {
        let (scenarios, labels): (Vec<_>, Vec<_>) = self
            .scenarios
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == sigma)
            .map(|(s, &l)| (s.clone(), l))
            .unzip();
        if scenarios.is_empty() {
            return Err(Error::Empty(format!("scenario group for pattern {sigma}")));
        }
        ScenarioSet::new(scenarios, labels, vec![sigma], self.units)
    }

    /// Concatenates groups in order; pattern lists are merged.
    pub fn concat(sets: Vec<ScenarioSet>) -> Result<ScenarioSet> {
        let units = sets
            .first()
            .ok_or_else(|| Error::Empty("scenario groups".into()))?
            .units;
        let mut scenarios = Vec::new();
        let mut labels = Vec::new();
        let mut sigma_list: Vec<f64> = Vec::new();
        for set in sets {
            if set.units != units {
                return Err(Error::Config("cannot mix scenario units".into()));
            }
            for sigma in set.sigma_list {
                if !sigma_list.contains(&sigma) {
                    sigma_list.push(sigma);
                }
            }
            scenarios.extend(set.scenarios);
            labels.extend(set.labels);
        }
        ScenarioSet::new(scenarios, labels, sigma_list, units)
    }

    /// Joins two sets covering consecutive time ranges: scenario `i` of the
    /// result is scenario `i` of `self` followed by scenario `i` of `next`.
    pub fn append_time(&mut self, next: &ScenarioSet) -> Result<()> {
        if next.len() != self.len() {
            return Err(Error::length("scenario count", self.len(), next.len()));
        }
        if next.labels != self.labels || next.units != self.units {
            return Err(Error::Config("appended scenario block has different labels".into()));
        }
        for (a, b) in self.scenarios.iter_mut().zip(&next.scenarios) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    /// Maps normalized values back to original units (no clamping).
    pub fn denormalize(&self, norm: &NormalizationParams) -> Result<ScenarioSet> {
        if self.units == Units::Original {
            return Ok(self.clone());
        }
        let target = norm.target();
        let scenarios = self
            .scenarios
            .iter()
            .map(|s| s.iter().map(|&v| target.denormalize(v)).collect())
            .collect();
        Ok(Self {
            scenarios,
            labels: self.labels.clone(),
            sigma_list: self.sigma_list.clone(),
            units: Units::Original,
        })
    }

    fn column(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        self.scenarios.iter().map(move |s| s[t])
    }
}

/// Per-step minimum and maximum across scenarios.
pub fn envelope(scenarios: &ScenarioSet) -> Result<PredictionInterval> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenario set".into()));
    }
    let horizon = scenarios.horizon();
    let mut lower = Vec::with_capacity(horizon);
    let mut upper = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (lo, hi) = scenarios
            .column(t)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        lower.push(lo);
        upper.push(hi);
    }
    PredictionInterval::new(lower, upper)
}

/// Empirical quantile of ascending-sorted values with linear interpolation
/// between order statistics at position `q · (n − 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Per-step `[α/2, 1 − α/2]` empirical quantile interval.
pub fn quantile_interval(scenarios: &ScenarioSet, alpha: f64) -> Result<PredictionInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    quantile_bounds(scenarios, alpha / 2.0, 1.0 - alpha / 2.0)
}

pub(crate) fn quantile_bounds(
    scenarios: &ScenarioSet,
    q_lo: f64,
    q_hi: f64,
) -> Result<PredictionInterval> {
    if scenarios.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "quantile interval needs at least 2 scenarios, got {}",
            scenarios.len()
        )));
    }
    let horizon = scenarios.horizon();
    let mut lower = Vec::with_capacity(horizon);
    let mut upper = Vec::with_capacity(horizon);
    let mut column = Vec::with_capacity(scenarios.len());
    for t in 0..horizon {
        column.clear();
        column.extend(scenarios.column(t));
        column.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&column, q_lo));
        upper.push(quantile_sorted(&column, q_hi));
    }
    PredictionInterval::new(lower, upper)
}

/// How a scenario set is collapsed into one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum IntervalRule {
    Envelope,
    Quantile { alpha: f64 },
}

impl Default for IntervalRule {
    fn default() -> Self {
        IntervalRule::Envelope
    }
}

impl IntervalRule {
    pub fn apply(&self, scenarios: &ScenarioSet) -> Result<PredictionInterval> {
        match *self {
            IntervalRule::Envelope => envelope(scenarios),
            IntervalRule::Quantile { alpha } => quantile_interval(scenarios, alpha),
        }
    }

    pub fn name(&self) -> String {
        match self {
            IntervalRule::Envelope => "envelope".into(),
            IntervalRule::Quantile { alpha } => format!("quantile({alpha})"),
        }
    }
}

/// One closed segment of a multi-band interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    /// Patterns whose segments were merged into this band.
    pub patterns: Vec<f64>,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Per step, a sorted list of pairwise disjoint closed bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiInterval {
    bands: Vec<Vec<Band>>,
}

impl MultiInterval {
    pub fn bands(&self) -> &[Vec<Band>] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// A single-band multi-interval equivalent to `interval`.
    pub fn from_interval(interval: &PredictionInterval, pattern: f64) -> Self {
        let bands = (0..interval.len())
            .map(|t| {
                vec![Band {
                    lower: interval.lower()[t],
                    upper: interval.upper()[t],
                    patterns: vec![pattern],
                }]
            })
            .collect();
        Self { bands }
    }
}

/// Merges per-pattern intervals step by step; overlapping or touching
/// segments coalesce, disjoint ones stay separate bands.
pub fn multi_union(per_pattern: &[(f64, PredictionInterval)]) -> Result<MultiInterval> {
    let (_, first) = per_pattern
        .first()
        .ok_or_else(|| Error::Empty("pattern interval list".into()))?;
    let horizon = first.len();
    for (_, iv) in per_pattern {
        if iv.len() != horizon {
            return Err(Error::length("pattern interval", horizon, iv.len()));
        }
    }

    let mut bands = Vec::with_capacity(horizon);
    let mut segments: Vec<(f64, f64, f64)> = Vec::with_capacity(per_pattern.len());
    for t in 0..horizon {
        segments.clear();
        segments.extend(
            per_pattern
                .iter()
                .map(|(sigma, iv)| (iv.lower()[t], iv.upper()[t], *sigma)),
        );
        segments.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut merged: Vec<Band> = Vec::new();
        for &(lo, hi, sigma) in &segments {
            match merged.last_mut() {
                Some(band) if lo <= band.upper => {
                    band.upper = band.upper.max(hi);
                    if !band.patterns.contains(&sigma) {
                        band.patterns.push(sigma);
                    }
                }
                _ => merged.push(Band {
                    lower: lo,
                    upper: hi,
                    patterns: vec![sigma],
                }),
            }
        }
        for band in &mut merged {
            band.patterns.sort_by(f64::total_cmp);
        }
        bands.push(merged);
    }
    Ok(MultiInterval { bands })
}

/// Union coverage ratio and average union measure.
pub fn multi_coverage_and_width(multi: &MultiInterval, actuals: &[f64]) -> Result<(f64, f64)> {
    if actuals.is_empty() {
        return Err(Error::Empty("actuals".into()));
    }
    if multi.len() != actuals.len() {
        return Err(Error::length("multi-interval", actuals.len(), multi.len()));
    }
    let mut covered = 0usize;
    let mut total_width = 0.0;
    for (bands, &theta) in multi.bands.iter().zip(actuals) {
        if bands.iter().any(|b| b.contains(theta)) {
            covered += 1;
        }
        total_width += bands.iter().map(Band::width).sum::<f64>();
    }
    let n = actuals.len() as f64;
    Ok((covered as f64 / n, total_width / n))
}

fn pattern_tag(patterns: &[f64]) -> String {
    patterns
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Writes the interval dump CSV: `t,band_index,lower,upper,pattern`.
pub fn write_interval_dump<W: Write>(writer: W, multi: &MultiInterval) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "band_index", "lower", "upper", "pattern"])?;
    for (t, bands) in multi.bands.iter().enumerate() {
        for (i, band) in bands.iter().enumerate() {
            w.write_record([
                t.to_string(),
                i.to_string(),
                band.lower.to_string(),
                band.upper.to_string(),
                pattern_tag(&band.patterns),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("interval dump", e))?;
    Ok(())
}
