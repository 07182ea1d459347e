//! Plain-loop reference implementations and random instance generators.

use ctsgan_core::metrics::{PredictionInterval, RunCollection};
use ctsgan_core::seed::Rng;
use rand::Rng as _;

/// Values on a quarter grid so that bounds and actuals often coincide.
fn grid_value(rng: &mut Rng) -> f64 {
    rng.random_range(0..=20) as f64 * 0.25
}

pub fn random_interval(rng: &mut Rng, t_len: usize) -> PredictionInterval {
    let mut lower = Vec::with_capacity(t_len);
    let mut upper = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let (a, b) = (grid_value(rng), grid_value(rng));
        lower.push(a.min(b));
        upper.push(a.max(b));
    }
    PredictionInterval::new(lower, upper).unwrap()
}

/// A collection with `T ≤ max_t` targets and `S ≤ max_s` runs.
pub fn random_runs(rng: &mut Rng, max_t: usize, max_s: usize) -> RunCollection {
    let t_len = rng.random_range(1..=max_t);
    let s = rng.random_range(1..=max_s);
    let actuals = (0..t_len).map(|_| grid_value(rng)).collect();
    let runs = (0..s).map(|_| random_interval(rng, t_len)).collect();
    RunCollection::new(actuals, runs).unwrap()
}

pub fn covered(lower: f64, upper: f64, theta: f64) -> bool {
    !(theta < lower) && !(theta > upper)
}

pub fn covered_count(actuals: &[f64], iv: &PredictionInterval) -> usize {
    let mut n = 0;
    for t in 0..actuals.len() {
        if covered(iv.lower()[t], iv.upper()[t], actuals[t]) {
            n += 1;
        }
    }
    n
}

pub fn ecpas(actuals: &[f64], iv: &PredictionInterval) -> f64 {
    covered_count(actuals, iv) as f64 / actuals.len() as f64
}

pub fn eawapi(iv: &PredictionInterval) -> f64 {
    let mut total = 0.0;
    for t in 0..iv.len() {
        total += iv.upper()[t] - iv.lower()[t];
    }
    total / iv.len() as f64
}

pub fn phi(runs: &RunCollection, delta_prime: f64) -> f64 {
    let mut hits = 0;
    for iv in runs.runs() {
        if ecpas(runs.actuals(), iv) >= delta_prime {
            hits += 1;
        }
    }
    hits as f64 / runs.num_runs() as f64
}

pub fn varphi(runs: &RunCollection, xi_prime: f64) -> f64 {
    let mut hits = 0;
    for iv in runs.runs() {
        if eawapi(iv) < xi_prime {
            hits += 1;
        }
    }
    hits as f64 / runs.num_runs() as f64
}

pub fn ecp_one(runs: &RunCollection, t: usize) -> f64 {
    let mut hits = 0;
    for iv in runs.runs() {
        if covered(iv.lower()[t], iv.upper()[t], runs.actuals()[t]) {
            hits += 1;
        }
    }
    hits as f64 / runs.num_runs() as f64
}

pub fn eaw_one(runs: &RunCollection, t: usize) -> f64 {
    let mut total = 0.0;
    for iv in runs.runs() {
        total += iv.upper()[t] - iv.lower()[t];
    }
    total / runs.num_runs() as f64
}

/// Measure of a union of closed segments, by scanning the elementary gaps
/// between sorted endpoints.
pub fn union_measure(segments: &[(f64, f64)]) -> f64 {
    let mut points: Vec<f64> = segments.iter().flat_map(|&(a, b)| [a, b]).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut total = 0.0;
    for w in points.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if segments.iter().any(|&(a, b)| covered(a, b, mid)) {
            total += w[1] - w[0];
        }
    }
    total
}

pub fn in_union(segments: &[(f64, f64)], x: f64) -> bool {
    segments.iter().any(|&(a, b)| covered(a, b, x))
}
