//! Ingestion, clipping, min-max normalization and windowing.

mod ingest;
pub mod synthetic;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::quantile_sorted;

pub use ingest::{load_csv, parse_timestamp, write_normalized_csv, CsvSchema};

/// A named, time-aligned exogenous channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// Uniformly sampled target series with optional exogenous channels.
/// Timestamps are epoch seconds (UTC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    timestamps: Vec<i64>,
    values: Vec<f64>,
    exogenous: Vec<Channel>,
}

impl RawSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, exogenous: Vec<Channel>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::length("series values", timestamps.len(), values.len()));
        }
        for ch in &exogenous {
            if ch.values.len() != values.len() {
                return Err(Error::length(
                    format!("exogenous channel `{}`", ch.name),
                    values.len(),
                    ch.values.len(),
                ));
            }
            if let Some(i) = ch.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("channel `{}` at index {i}", ch.name)));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value at index {i}")));
        }
        if timestamps.len() >= 2 {
            let step = timestamps[1] - timestamps[0];
            if step <= 0 {
                return Err(Error::Format(format!(
                    "timestamps not strictly increasing at {}",
                    timestamps[1]
                )));
            }
            if let Some(w) = timestamps.windows(2).find(|w| w[1] - w[0] != step) {
                return Err(Error::Format(format!(
                    "non-uniform step between {} and {} (expected {step} s)",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            timestamps,
            values,
            exogenous,
        })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn exogenous(&self) -> &[Channel] {
        &self.exogenous
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sampling step in seconds, if there are at least two points.
    pub fn step(&self) -> Option<i64> {
        (self.timestamps.len() >= 2).then(|| self.timestamps[1] - self.timestamps[0])
    }

    /// Points `range.start..range.end`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<RawSeries> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InsufficientData(format!(
                "range {}..{} exceeds series length {}",
                range.start,
                range.end,
                self.len()
            )));
        }
        Ok(RawSeries {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range.clone()].to_vec(),
            exogenous: self
                .exogenous
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    values: c.values[range.clone()].to_vec(),
                })
                .collect(),
        })
    }

    fn channels_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<f64>)> {
        std::iter::once(("value", &mut self.values))
            .chain(self.exogenous.iter_mut().map(|c| (c.name.as_str(), &mut c.values)))
    }
}

/// Closed clamp range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "clip bounds lo {} must be below hi {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn clamp(&self, v: f64) -> f64 {
        self.hi.min(self.lo.max(v))
    }
}

/// Outlier limits. Percentile limits are applied first, absolute bounds
/// after. Default is off.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    /// Absolute bounds for the target channel.
    #[serde(default)]
    pub value_bounds: Option<Bounds>,
    /// Absolute bounds for exogenous channels, by name.
    #[serde(default)]
    pub exogenous_bounds: BTreeMap<String, Bounds>,
    /// `(q_lo, q_hi)` empirical quantiles applied to every channel.
    #[serde(default)]
    pub percentiles: Option<(f64, f64)>,
}

pub fn clip_outliers(series: &RawSeries, spec: &ClipSpec) -> Result<RawSeries> {
    if let Some(b) = &spec.value_bounds {
        b.validate()?;
    }
    for (name, b) in &spec.exogenous_bounds {
        b.validate()?;
        if !series.exogenous.iter().any(|c| &c.name == name) {
            return Err(Error::Schema(format!("clip bounds for unknown channel `{name}`")));
        }
    }
    if let Some((q_lo, q_hi)) = spec.percentiles {
        if !(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0) {
            return Err(Error::Config(format!(
                "percentiles ({q_lo}, {q_hi}) must satisfy 0 <= q_lo < q_hi <= 1"
            )));
        }
    }

    let mut out = series.clone();
    for (name, values) in out.channels_mut() {
        if values.is_empty() {
            continue;
        }
        if let Some((q_lo, q_hi)) = spec.percentiles {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let b = Bounds {
                lo: quantile_sorted(&sorted, q_lo),
                hi: quantile_sorted(&sorted, q_hi),
            };
            values.iter_mut().for_each(|v| *v = b.clamp(*v));
        }
        let absolute = if name == "value" {
            spec.value_bounds
        } else {
            spec.exogenous_bounds.get(name).copied()
        };
        if let Some(b) = absolute {
            values.iter_mut().for_each(|v| *v = b.clamp(*v));
        }
    }
    Ok(out)
}

/// Min-max parameters of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(name: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty(format!("channel `{name}`")));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mm = Self {
            name: name.to_string(),
            min,
            max,
        };
        mm.validate()?;
        Ok(mm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::NonFinite(format!("normalization range of `{}`", self.name)));
        }
        if !(self.max > self.min) {
            return Err(Error::DegenerateRange(format!(
                "channel `{}` has min {} and max {}",
                self.name, self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    /// Linear inverse; values outside `[0, 1]` are not clamped.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Per-channel min-max parameters; channel 0 is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub channels: Vec<MinMax>,
}

impl NormalizationParams {
    pub fn target(&self) -> &MinMax {
        &self.channels[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("normalization has no channels".into()));
        }
        self.channels.iter().try_for_each(MinMax::validate)
    }
}

pub fn denormalize(p_prime: f64, norm: &MinMax) -> Result<f64> {
    norm.validate()?;
    Ok(norm.denormalize(p_prime))
}

/// Normalized target and exogenous channels, still aligned with timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub exogenous: Vec<Channel>,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fits min-max parameters on `series` and normalizes it.
pub fn minmax_fit_normalize(series: &RawSeries) -> Result<(NormalizedSeries, NormalizationParams)> {
    let mut channels = vec![MinMax::fit("value", &series.values)?];
    for ch in &series.exogenous {
        channels.push(MinMax::fit(&ch.name, &ch.values)?);
    }
    let params = NormalizationParams { channels };
    let normalized = apply_normalization(series, &params)?;
    Ok((normalized, params))
}

/// Normalizes with previously fitted parameters. Values outside the fitted
/// range map outside `[0, 1]`.
pub fn apply_normalization(series: &RawSeries, params: &NormalizationParams) -> Result<NormalizedSeries> {
    params.validate()?;
    if params.channels.len() != series.exogenous.len() + 1 {
        return Err(Error::length(
            "normalization channels",
            series.exogenous.len() + 1,
            params.channels.len(),
        ));
    }
    let target = params.target();
    Ok(NormalizedSeries {
        timestamps: series.timestamps.clone(),
        values: series.values.iter().map(|&v| target.normalize(v)).collect(),
        exogenous: series
            .exogenous
            .iter()
            .zip(&params.channels[1..])
            .map(|(ch, mm)| Channel {
                name: ch.name.clone(),
                values: ch.values.iter().map(|&v| mm.normalize(v)).collect(),
            })
            .collect(),
    })
}

/// Which condition features accompany each time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    /// `(sin, cos)` of the hour of day.
    #[serde(default = "yes")]
    pub hour_of_day: bool,
    /// Seven-way day-of-week one-hot.
    #[serde(default = "yes")]
    pub day_of_week: bool,
    /// Normalized exogenous channels.
    #[serde(default = "yes")]
    pub exogenous: bool,
}

fn yes() -> bool {
    true
}

impl Default for ConditionSpec {
    fn default() -> Self {
        Self {
            hour_of_day: true,
            day_of_week: true,
            exogenous: true,
        }
    }
}

impl ConditionSpec {
    pub fn dim(&self, num_exogenous: usize) -> usize {
        2 * self.hour_of_day as usize
            + 7 * self.day_of_week as usize
            + if self.exogenous { num_exogenous } else { 0 }
    }
}

/// `(sin, cos)` of the fractional hour of day.
pub fn hour_features(timestamp: i64) -> (f64, f64) {
    let dt = DateTime::from_timestamp(timestamp, 0).unwrap_or_default();
    let hour = dt.hour() as f64 + dt.minute() as f64 / 60.0 + dt.second() as f64 / 3600.0;
    let angle = 2.0 * PI * hour / 24.0;
    (angle.sin(), angle.cos())
}

fn condition_row(series: &NormalizedSeries, i: usize, spec: &ConditionSpec) -> Vec<f64> {
    let mut row = Vec::with_capacity(spec.dim(series.exogenous.len()));
    let ts = series.timestamps[i];
    if spec.hour_of_day {
        let (s, c) = hour_features(ts);
        row.push(s);
        row.push(c);
    }
    if spec.day_of_week {
        let dow = DateTime::from_timestamp(ts, 0)
            .unwrap_or_default()
            .weekday()
            .num_days_from_monday() as usize;
        row.extend((0..7).map(|d| if d == dow { 1.0 } else { 0.0 }));
    }
    if spec.exogenous {
        row.extend(series.exogenous.iter().map(|c| c.values[i]));
    }
    row
}

/// One training or evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Index of the first point in the source series.
    pub start: usize,
    /// Normalized target values.
    pub values: Vec<f64>,
    /// One condition vector per step.
    pub conditions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub windows: Vec<Window>,
    pub seq_len: usize,
    pub cond_dim: usize,
    pub norm: NormalizationParams,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn windowize(
    series: &NormalizedSeries,
    norm: &NormalizationParams,
    seq_len: usize,
    stride: usize,
    spec: &ConditionSpec,
) -> Result<TimeSeriesDataset> {
    if seq_len == 0 || stride == 0 {
        return Err(Error::Config("seq_len and stride must be positive".into()));
    }
    let n = series.len();
    if seq_len > n {
        return Err(Error::InsufficientData(format!(
            "series of length {n} is shorter than seq_len {seq_len}"
        )));
    }
    let conditions: Vec<Vec<f64>> = (0..n).map(|i| condition_row(series, i, spec)).collect();
    let count = (n - seq_len) / stride + 1;
    let windows = (0..count)
        .map(|w| {
            let start = w * stride;
            Window {
                start,
                values: series.values[start..start + seq_len].to_vec(),
                conditions: conditions[start..start + seq_len].to_vec(),
            }
        })
        .collect();
    Ok(TimeSeriesDataset {
        windows,
        seq_len,
        cond_dim: spec.dim(series.exogenous.len()),
        norm: norm.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> RawSeries {
        let ts = (0..values.len() as i64).map(|i| i * 3600).collect();
        RawSeries::new(ts, values, vec![]).unwrap()
    }

    #[test]
    fn clamp_arithmetic() {
        let s = series(vec![-50.0, 10.0, 20.0, 900.0]);
        let spec = ClipSpec {
            value_bounds: Some(Bounds { lo: 0.0, hi: 300.0 }),
            ..Default::default()
        };
        assert_eq!(clip_outliers(&s, &spec).unwrap().values(), &[0.0, 10.0, 20.0, 300.0]);
        assert_eq!(clip_outliers(&s, &ClipSpec::default()).unwrap(), s);
    }

    #[test]
    fn percentile_clamp_uses_interpolated_quantiles() {
        let s = series((1..=100).map(f64::from).collect());
        let spec = ClipSpec {
            percentiles: Some((0.01, 0.99)),
            ..Default::default()
        };
        let out = clip_outliers(&s, &spec).unwrap();
        // h = 0.01 * 99 = 0.99 -> 1 + 0.99; h = 98.01 -> 99 + 0.01.
        assert!((out.values()[0] - 1.99).abs() < 1e-12);
        assert!((out.values()[99] - 99.01).abs() < 1e-12);
        assert_eq!(out.values()[50], 51.0);
    }

    #[test]
    fn bad_clip_config() {
        let s = series(vec![1.0, 2.0]);
        let spec = ClipSpec {
            value_bounds: Some(Bounds { lo: 5.0, hi: 5.0 }),
            ..Default::default()
        };
        assert!(matches!(clip_outliers(&s, &spec), Err(Error::Config(_))));
        let spec = ClipSpec {
            percentiles: Some((0.9, 0.1)),
            ..Default::default()
        };
        assert!(matches!(clip_outliers(&s, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn minmax_arithmetic() {
        let mm = MinMax {
            name: "value".into(),
            min: 0.0,
            max: 10.0,
        };
        assert_eq!(mm.normalize(5.0), 0.5);
        assert_eq!(mm.normalize(10.0), 1.0);
        assert_eq!(denormalize(0.5, &mm).unwrap(), 5.0);
        assert_eq!(denormalize(0.0, &mm).unwrap(), 0.0);
        assert_eq!(mm.denormalize(1.2), 12.0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = series(vec![7.0, 7.0, 7.0]);
        assert!(matches!(minmax_fit_normalize(&s), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn window_counts() {
        let s = series((0..100).map(f64::from).collect());
        let (ns, norm) = minmax_fit_normalize(&s).unwrap();
        let spec = ConditionSpec::default();
        assert_eq!(windowize(&ns, &norm, 24, 24, &spec).unwrap().len(), 4);
        let short = series((0..24).map(f64::from).collect());
        let (ns, norm) = minmax_fit_normalize(&short).unwrap();
        assert_eq!(windowize(&ns, &norm, 24, 1, &spec).unwrap().len(), 1);
        assert!(matches!(
            windowize(&ns, &norm, 25, 1, &spec),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn hour_encoding() {
        let (s, c) = hour_features(6 * 3600);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(c.abs() < 1e-12);
        let (s, c) = hour_features(0);
        assert_eq!((s, c), (0.0, 1.0));
    }

    #[test]
    fn condition_layout() {
        // 1970-01-01 was a Thursday.
        let ts = vec![0, 3600];
        let raw = RawSeries::new(
            ts,
            vec![1.0, 2.0],
            vec![Channel {
                name: "demand".into(),
                values: vec![10.0, 20.0],
            }],
        )
        .unwrap();
        let (ns, norm) = minmax_fit_normalize(&raw).unwrap();
        let ds = windowize(&ns, &norm, 2, 1, &ConditionSpec::default()).unwrap();
        assert_eq!(ds.cond_dim, 10);
        let row = &ds.windows[0].conditions[1];
        assert_eq!(&row[2..9], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(row[9], 1.0);
    }

    #[test]
    fn rejects_non_uniform_step() {
        assert!(matches!(
            RawSeries::new(vec![0, 10, 30], vec![1.0; 3], vec![]),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn normalization_round_trip(
            lo in -1e4f64..1e4,
            span in 1e-3f64..1e4,
            frac in 0.0f64..=1.0,
        ) {
            let mm = MinMax { name: "v".into(), min: lo, max: lo + span };
            let p = lo + frac * span;
            let back = mm.denormalize(mm.normalize(p));
            prop_assert!((back - p).abs() <= 1e-9 * p.abs().max(1.0));
        }

        #[test]
        fn normalization_preserves_order(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let mm = MinMax { name: "v".into(), min: -1e3, max: 1e3 };
            if a < b {
                prop_assert!(mm.normalize(a) < mm.normalize(b));
            }
        }

        #[test]
        fn clipping_is_idempotent(
            values in proptest::collection::vec(-500f64..500.0, 2..40),
            lo in -100f64..0.0,
            width in 1f64..200.0,
        ) {
            let s = series(values);
            let spec = ClipSpec {
                value_bounds: Some(Bounds { lo, hi: lo + width }),
                ..Default::default()
            };
            let once = clip_outliers(&s, &spec).unwrap();
            let twice = clip_outliers(&once, &spec).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn stride_seq_len_windows_rebuild_prefix(n in 24usize..200, seq_len in 1usize..24) {
            let s = series((0..n).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.01).collect());
            let (ns, norm) = minmax_fit_normalize(&s).unwrap();
            let ds = windowize(&ns, &norm, seq_len, seq_len, &ConditionSpec::default()).unwrap();
            let joined: Vec<f64> = ds.windows.iter().flat_map(|w| w.values.clone()).collect();
            prop_assert_eq!(ds.len(), (n - seq_len) / seq_len + 1);
            prop_assert_eq!(&joined[..], &ns.values[..joined.len()]);
        }
    }
}
