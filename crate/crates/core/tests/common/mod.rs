#![allow(dead_code)]
pub mod gradients;
pub mod oracles;

use ctsgan_core::data::{
    minmax_fit_normalize, windowize, ConditionSpec, RawSeries, TimeSeriesDataset,
};
use ctsgan_core::seed;
use rand::Rng as _;

pub const HOUR: i64 = 3600;
pub const MONDAY: i64 = 1_609_718_400;

/// `n_windows` stride-1 windows over an hourly daily sine with Gaussian-ish
/// noise, normalized, with calendar conditions.
pub fn sine_dataset(n_windows: usize, seq_len: usize, noise: f64, seed_value: u64) -> TimeSeriesDataset {
    let n = n_windows + seq_len - 1;
    let mut rng = seed::rng(seed_value);
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * (i % 24) as f64 / 24.0;
            50.0 + 20.0 * phase.sin() + noise * (rng.random::<f64>() - 0.5)
        })
        .collect();
    let ts = (0..n as i64).map(|i| MONDAY + i * HOUR).collect();
    let raw = RawSeries::new(ts, values, vec![]).unwrap();
    let (ns, norm) = minmax_fit_normalize(&raw).unwrap();
    windowize(&ns, &norm, seq_len, 1, &ConditionSpec::default()).unwrap()
}

/// Windows of a constant normalized value without conditions.
pub fn constant_dataset(n_windows: usize, seq_len: usize, value: f64) -> TimeSeriesDataset {
    let mut ds = sine_dataset(n_windows, seq_len, 1.0, 0);
    for w in &mut ds.windows {
        w.values = vec![value; seq_len];
        w.conditions = vec![vec![]; seq_len];
    }
    ds.cond_dim = 0;
    ds
}
