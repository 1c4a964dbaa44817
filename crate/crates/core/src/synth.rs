//! Synthetic ringdown generator used as ground truth.
//!
//! Channels are superpositions of damped complex modes: channel `i` carries
//! `Re(shape[i] * excitation * e^{lambda (t - t_event)})` for every event
//! that has fired, with `lambda = sigma + j 2 pi f`. Events re-excite all
//! modes multiplicatively; optional per-channel trends and white Gaussian
//! noise are added on top. Output is deterministic for a given seed.

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::ChannelSet;

type Complex64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(
        "sampling too slow: {sample_rate_hz} Hz cannot represent a {mode_hz} Hz mode \
         (the rate must exceed twice the mode frequency)"
    )]
    SamplingTooSlow { sample_rate_hz: f64, mode_hz: f64 },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

/// One ground-truth mode: eigenvalue `sigma + j 2 pi f`, complex shape and
/// base excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub frequency_hz: f64,
    /// Decay rate in 1/s; negative = decaying.
    pub sigma: f64,
    /// One complex observability phasor per channel, as `[re, im]` pairs.
    #[serde(with = "complex_pairs")]
    pub shape: Vec<Complex64>,
    /// Base excitation applied at every event, as `[re, im]`.
    #[serde(with = "complex_pair")]
    pub excitation: Complex64,
}

/// A disturbance at `time_s` scaling each mode's excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time_s: f64,
    /// One multiplier per mode.
    pub multipliers: Vec<f64>,
}

/// Optional slow per-channel drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrendSpec {
    /// Linear slope per channel, units/s.
    #[serde(default)]
    pub linear_slopes: Vec<f64>,
    /// Step offsets applied from `time_s` onward.
    #[serde(default)]
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub time_s: f64,
    /// One offset per channel.
    pub offsets: Vec<f64>,
}

/// Full scenario description; JSON-serializable with unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub modes: Vec<ModeSpec>,
    pub events: Vec<EventSpec>,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Standard deviation of additive white Gaussian noise per channel.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub trend: Option<TrendSpec>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Channel labels; defaults to `ch0..chM-1`.
    #[serde(default)]
    pub channel_ids: Option<Vec<String>>,
}

impl ScenarioSpec {
    /// Number of channels implied by the mode shapes (or 1 for a pure-noise
    /// scenario without modes).
    pub fn channel_count(&self) -> usize {
        self.modes
            .first()
            .map(|m| m.shape.len())
            .or_else(|| self.channel_ids.as_ref().map(|ids| ids.len()))
            .unwrap_or(1)
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.duration_s <= 0.0 || self.duration_s.is_nan() {
            return Err(SynthError::InvalidSpec(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if self.sample_rate_hz <= 0.0 || self.sample_rate_hz.is_nan() {
            return Err(SynthError::InvalidSpec(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::InvalidSpec("noise_std must be >= 0".into()));
        }
        let m = self.channel_count();
        for (j, mode) in self.modes.iter().enumerate() {
            if mode.shape.len() != m {
                return Err(SynthError::InvalidSpec(format!(
                    "mode {j} has {} shape entries, expected {m}",
                    mode.shape.len()
                )));
            }
            if mode.shape.iter().all(|g| g.norm_sqr() == 0.0) {
                return Err(SynthError::InvalidSpec(format!("mode {j} shape is all zero")));
            }
            if mode.frequency_hz <= 0.0 || mode.frequency_hz.is_nan() {
                return Err(SynthError::InvalidSpec(format!(
                    "mode {j} frequency must be positive"
                )));
            }
            if self.sample_rate_hz <= 2.0 * mode.frequency_hz {
                return Err(SynthError::SamplingTooSlow {
                    sample_rate_hz: self.sample_rate_hz,
                    mode_hz: mode.frequency_hz,
                });
            }
        }
        for (e, event) in self.events.iter().enumerate() {
            if event.multipliers.len() != self.modes.len() {
                return Err(SynthError::InvalidSpec(format!(
                    "event {e} has {} multipliers for {} modes",
                    event.multipliers.len(),
                    self.modes.len()
                )));
            }
        }
        if let Some(ids) = &self.channel_ids {
            if ids.len() != m {
                return Err(SynthError::InvalidSpec(format!(
                    "{} channel ids for {m} channels",
                    ids.len()
                )));
            }
        }
        if let Some(trend) = &self.trend {
            if !trend.linear_slopes.is_empty() && trend.linear_slopes.len() != m {
                return Err(SynthError::InvalidSpec(
                    "linear_slopes length must match channel count".into(),
                ));
            }
            for step in &trend.steps {
                if step.offsets.len() != m {
                    return Err(SynthError::InvalidSpec(
                        "step offsets length must match channel count".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Renders the scenario into a validated [`ChannelSet`].
pub fn generate(spec: &ScenarioSpec) -> Result<ChannelSet, SynthError> {
    spec.validate()?;
    let m = spec.channel_count();
    let n = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    if n < 2 {
        return Err(SynthError::InvalidSpec(
            "duration and sample rate give fewer than 2 samples".into(),
        ));
    }

    let mut samples = DMatrix::<f64>::zeros(m, n);
    for event in &spec.events {
        for (mode, &multiplier) in spec.modes.iter().zip(&event.multipliers) {
            let lambda = Complex64::new(mode.sigma, 2.0 * std::f64::consts::PI * mode.frequency_hz);
            let first = ((event.time_s * spec.sample_rate_hz).ceil() as isize).max(0) as usize;
            for k in first..n {
                let t = k as f64 / spec.sample_rate_hz - event.time_s;
                let envelope = mode.excitation * multiplier * (lambda * t).exp();
                for i in 0..m {
                    samples[(i, k)] += (mode.shape[i] * envelope).re;
                }
            }
        }
    }

    if let Some(trend) = &spec.trend {
        if !trend.linear_slopes.is_empty() {
            for i in 0..m {
                for k in 0..n {
                    samples[(i, k)] += trend.linear_slopes[i] * k as f64 / spec.sample_rate_hz;
                }
            }
        }
        for step in &trend.steps {
            let first = ((step.time_s * spec.sample_rate_hz).ceil() as isize).max(0) as usize;
            for i in 0..m {
                for k in first..n {
                    samples[(i, k)] += step.offsets[i];
                }
            }
        }
    }

    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        for i in 0..m {
            for k in 0..n {
                samples[(i, k)] += normal.sample(&mut rng);
            }
        }
    }

    let ids = spec
        .channel_ids
        .clone()
        .unwrap_or_else(|| (0..m).map(|i| format!("ch{i}")).collect());
    ChannelSet::new(ids, spec.sample_rate_hz, 0.0, samples)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

mod complex_pair {
    use super::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(value: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [value.re, value.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

mod complex_pairs {
    use super::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        values
            .iter()
            .map(|c| [c.re, c.im])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?
            .into_iter()
            .map(|[re, im]| Complex64::new(re, im))
            .collect())
    }
}
