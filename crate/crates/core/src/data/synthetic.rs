//! Seeded synthetic price series for experiments and tests.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Channel, RawSeries};
use crate::error::{Error, Result};
use crate::seed;

/// 2021-01-04T00:00:00Z, a Monday.
pub const DEFAULT_START: i64 = 1_609_718_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// Daily sinusoid plus Gaussian noise and rare positive spikes, with a
    /// correlated demand channel.
    SineWithSpikes {
        length: usize,
        #[serde(default = "default_step")]
        step_secs: i64,
        #[serde(default = "default_period")]
        period: usize,
        #[serde(default = "default_base")]
        base: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_spike_prob")]
        spike_prob: f64,
        #[serde(default = "default_spike_scale")]
        spike_scale: f64,
    },
    /// Price level switches with a daily binary regime carried by an
    /// exogenous `regime` channel.
    TwoRegime {
        length: usize,
        #[serde(default = "default_step")]
        step_secs: i64,
        #[serde(default = "default_period")]
        period: usize,
        low: f64,
        high: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_step() -> i64 {
    3600
}
fn default_period() -> usize {
    24
}
fn default_base() -> f64 {
    60.0
}
fn default_amplitude() -> f64 {
    20.0
}
fn default_noise() -> f64 {
    4.0
}
fn default_spike_prob() -> f64 {
    0.02
}
fn default_spike_scale() -> f64 {
    80.0
}

impl SyntheticSpec {
    pub fn sine_with_spikes(length: usize) -> Self {
        SyntheticSpec::SineWithSpikes {
            length,
            step_secs: default_step(),
            period: default_period(),
            base: default_base(),
            amplitude: default_amplitude(),
            noise: default_noise(),
            spike_prob: default_spike_prob(),
            spike_scale: default_spike_scale(),
        }
    }

    pub fn generate(&self, seed_value: u64) -> Result<RawSeries> {
        let mut rng = seed::rng(seed::mix(seed_value, seed::domain::SYNTHETIC));
        match *self {
            SyntheticSpec::SineWithSpikes {
                length,
                step_secs,
                period,
                base,
                amplitude,
                noise,
                spike_prob,
                spike_scale,
            } => {
                check(length, step_secs, period, noise)?;
                let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
                let mut values = Vec::with_capacity(length);
                let mut demand = Vec::with_capacity(length);
                for i in 0..length {
                    let phase = 2.0 * std::f64::consts::PI * (i % period) as f64 / period as f64;
                    let shape = (phase - std::f64::consts::FRAC_PI_2).sin();
                    let mut v = base + amplitude * shape + normal.sample(&mut rng);
                    if rng.random::<f64>() < spike_prob {
                        v += spike_scale * (0.5 + rng.random::<f64>());
                    }
                    values.push(v);
                    demand.push(5000.0 + 1500.0 * shape + 10.0 * normal.sample(&mut rng));
                }
                let timestamps = (0..length as i64).map(|i| DEFAULT_START + i * step_secs).collect();
                RawSeries::new(
                    timestamps,
                    values,
                    vec![Channel {
                        name: "demand".into(),
                        values: demand,
                    }],
                )
            }
            SyntheticSpec::TwoRegime {
                length,
                step_secs,
                period,
                low,
                high,
                noise,
            } => {
                check(length, step_secs, period, noise)?;
                let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
                let mut values = Vec::with_capacity(length);
                let mut regime = Vec::with_capacity(length);
                let mut day_regime = 0.0;
                for i in 0..length {
                    if i % period == 0 {
                        day_regime = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    }
                    let level = if day_regime > 0.5 { high } else { low };
                    let phase = 2.0 * std::f64::consts::PI * (i % period) as f64 / period as f64;
                    values.push(level + 0.1 * (high - low) * phase.sin() + normal.sample(&mut rng));
                    regime.push(day_regime);
                }
                let timestamps = (0..length as i64).map(|i| DEFAULT_START + i * step_secs).collect();
                RawSeries::new(
                    timestamps,
                    values,
                    vec![Channel {
                        name: "regime".into(),
                        values: regime,
                    }],
                )
            }
        }
    }
}

fn check(length: usize, step_secs: i64, period: usize, noise: f64) -> Result<()> {
    if length < 2 || step_secs <= 0 || period == 0 {
        return Err(Error::Config(
            "synthetic series needs length >= 2 and positive step and period".into(),
        ));
    }
    if !(noise > 0.0) {
        return Err(Error::Config("synthetic noise must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let spec = SyntheticSpec::sine_with_spikes(240);
        let a = spec.generate(3).unwrap();
        assert_eq!(a, spec.generate(3).unwrap());
        assert_ne!(a, spec.generate(4).unwrap());
        assert_eq!(a.len(), 240);
        assert_eq!(a.exogenous()[0].name, "demand");
    }

    #[test]
    fn regimes_are_daily() {
        let spec = SyntheticSpec::TwoRegime {
            length: 24 * 10,
            step_secs: 3600,
            period: 24,
            low: 20.0,
            high: 80.0,
            noise: 1.0,
        };
        let s = spec.generate(1).unwrap();
        let regime = &s.exogenous()[0].values;
        for day in regime.chunks(24) {
            assert!(day.iter().all(|&r| r == day[0]));
        }
    }
}
