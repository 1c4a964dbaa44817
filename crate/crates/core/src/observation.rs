//! Part I of the method: decompose each sliding window, estimate frequency
//! and decay per complex component, gate, rotate, and emit observations.
//!
//! Every retained complex component of a window becomes one
//! [`ModeObservation`]: a frequency (power-weighted mean over the dominant
//! spectral band of the score), a decay rate (exponential regression on the
//! max-normalized score envelope over the tapered time axis), and one
//! complex observability phasor per channel (the component's column of
//! `W = U V`, rotated so the largest phasor sits at angle zero and scaled
//! to unit maximum magnitude).
//!
//! Gates: components whose frequency falls outside the configured band, or
//! whose regression error reaches the threshold, are dropped. An empty
//! result is not an error; quiet windows simply contribute nothing.

use std::io::{BufRead, Write};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{self, ComponentSelection, DecompError, TwoLayerConfig};
use crate::sigproc::{self, EmdConfig, SigprocError};
use crate::timeseries::{ChannelSet, MeasurementWindow, WindowError};

type Complex64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("all phasors are zero; the mode shape has no reference")]
    ZeroShape,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("malformed observation record: {0}")]
    MalformedRecord(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// All Part I tuning in one place. Defaults follow the method's reference
/// values: 10 s windows stepped by 1 s, 10% taper, a 0.1-2 Hz acceptance
/// band and a regression-error gate of 4e-3.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window_length_s: f64,
    pub window_step_s: f64,
    /// Allowed window lengths; lengths outside are rejected up front.
    pub window_bounds_s: (f64, f64),
    pub taper_fraction: f64,
    pub keep_pcs: ComponentSelection,
    pub keep_cpcs: ComponentSelection,
    /// Accepted frequency band, Hz.
    pub band_hz: (f64, f64),
    /// Observations with regression mse at or above this are dropped.
    pub max_regression_mse: f64,
    /// Relative power threshold for the mean-frequency band; see
    /// [`sigproc::mean_frequency`].
    pub peak_fraction: f64,
    pub emd: EmdConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_length_s: 10.0,
            window_step_s: 1.0,
            window_bounds_s: (5.0, 10.0),
            taper_fraction: sigproc::DEFAULT_TAPER_FRACTION,
            keep_pcs: ComponentSelection::default(),
            keep_cpcs: ComponentSelection::default(),
            band_hz: (0.1, 2.0),
            max_regression_mse: 4e-3,
            peak_fraction: sigproc::DEFAULT_PEAK_FRACTION,
            emd: EmdConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ObservationError> {
        let (lo, hi) = self.window_bounds_s;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ObservationError::InvalidConfig(format!(
                "window bounds ({lo}, {hi}) are not a positive range"
            )));
        }
        if self.window_length_s < lo || self.window_length_s > hi {
            return Err(ObservationError::InvalidConfig(format!(
                "window length {} s outside configured bounds [{lo}, {hi}] s",
                self.window_length_s
            )));
        }
        if self.window_step_s <= 0.0 || self.window_step_s.is_nan() {
            return Err(ObservationError::InvalidConfig(
                "window step must be positive".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.taper_fraction) {
            return Err(ObservationError::InvalidConfig(format!(
                "taper fraction {} outside [0, 0.5)",
                self.taper_fraction
            )));
        }
        if self.band_hz.0 < 0.0 || self.band_hz.1 <= self.band_hz.0 || self.band_hz.0.is_nan() {
            return Err(ObservationError::InvalidConfig(format!(
                "band ({}, {}) Hz is not an increasing nonnegative range",
                self.band_hz.0, self.band_hz.1
            )));
        }
        if self.max_regression_mse <= 0.0 || self.max_regression_mse.is_nan() {
            return Err(ObservationError::InvalidConfig(
                "regression mse threshold must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.peak_fraction) {
            return Err(ObservationError::InvalidConfig(format!(
                "peak fraction {} outside [0, 1]",
                self.peak_fraction
            )));
        }
        Ok(())
    }

    fn two_layer(&self) -> TwoLayerConfig {
        TwoLayerConfig {
            keep_pcs: self.keep_pcs,
            keep_cpcs: self.keep_cpcs,
            taper_fraction: self.taper_fraction,
            emd: self.emd.clone(),
        }
    }
}

/// One accepted mode observation from a single window and component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeObservation {
    pub frequency_hz: f64,
    /// Decay rate in 1/s from the envelope regression; negative = decaying.
    pub decay_rate: f64,
    /// One complex observability phasor per channel, unit maximum
    /// magnitude, largest phasor at angle zero.
    #[serde(with = "phasor_pairs")]
    pub phasors: Vec<Complex64>,
    pub window_index: usize,
    /// Absolute start time of the source window, seconds.
    pub window_t_start: f64,
    /// Which complex component of the window produced this observation.
    pub cpc_index: usize,
    /// Mean squared error of the envelope regression (max-normalized
    /// envelope, original domain).
    pub regression_mse: f64,
}

impl ModeObservation {
    /// Flattens to the `2M + 2` clustering coordinates
    /// `[f, sigma, Re G_1, Im G_1, ..., Re G_M, Im G_M]`.
    pub fn as_point(&self) -> Vec<f64> {
        let mut point = Vec::with_capacity(2 * self.phasors.len() + 2);
        point.push(self.frequency_hz);
        point.push(self.decay_rate);
        for g in &self.phasors {
            point.push(g.re);
            point.push(g.im);
        }
        point
    }

    /// Recovers `(frequency, decay rate, phasors)` from a flattened point.
    pub fn from_point(point: &[f64]) -> Result<(f64, f64, Vec<Complex64>), ObservationError> {
        if point.len() < 4 || !point.len().is_multiple_of(2) {
            return Err(ObservationError::MalformedRecord(format!(
                "point of length {} is not 2M+2 with M >= 1",
                point.len()
            )));
        }
        let phasors = point[2..]
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok((point[0], point[1], phasors))
    }
}

/// The observations from one Part I run, with channel labels for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub channel_ids: Vec<String>,
    pub observations: Vec<ModeObservation>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Writes one JSON object per line, in stable field order.
    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<(), ObservationError> {
        for obs in &self.observations {
            serde_json::to_writer(&mut writer, obs)
                .map_err(|e| ObservationError::MalformedRecord(e.to_string()))?;
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Reads observations back from JSON lines. Channel ids are not stored
    /// in the line format; callers supply them (placeholders by default).
    pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<ModeObservation>, ObservationError> {
        let mut observations = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let obs: ModeObservation = serde_json::from_str(&line).map_err(|e| {
                ObservationError::MalformedRecord(format!("line {}: {e}", k + 1))
            })?;
            observations.push(obs);
        }
        Ok(observations)
    }
}

/// Rotates all phasors by the negated argument of the largest-magnitude
/// phasor, putting that phasor at angle zero. Magnitudes are untouched.
pub fn rotate_to_reference(phasors: &[Complex64]) -> Result<Vec<Complex64>, ObservationError> {
    let largest = phasors
        .iter()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .copied()
        .unwrap_or_else(|| Complex64::new(0.0, 0.0));
    let magnitude = largest.norm();
    if magnitude == 0.0 {
        return Err(ObservationError::ZeroShape);
    }
    let rotation = largest.conj() / magnitude;
    Ok(phasors.iter().map(|g| g * rotation).collect())
}

/// Runs the two-layer decomposition on one window and emits every complex
/// component that passes the band and regression gates.
pub fn extract_observations(
    window: &MeasurementWindow<'_>,
    cfg: &PipelineConfig,
) -> Result<Vec<ModeObservation>, ObservationError> {
    let data = window.data();
    let (m, n) = data.shape();
    let fs = window.sample_rate_hz();

    let mut centered = data.clone_owned();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }

    let decomposition = match decomp::two_layer(centered.as_view(), &cfg.two_layer()) {
        Ok(result) => result,
        // A window without usable variance is quiet, not broken.
        Err(DecompError::NoComponentsKept) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };

    let cut = sigproc::taper_len(n, cfg.taper_fraction);
    let times: Vec<f64> = (0..decomposition.z.ncols())
        .map(|k| (cut + k) as f64 / fs)
        .collect();

    let mut observations = Vec::new();
    for cpc_index in 0..decomposition.z.nrows() {
        let score: Vec<Complex64> = decomposition.z.row(cpc_index).iter().copied().collect();

        let frequency_hz = match sigproc::mean_frequency(&score, fs, cfg.peak_fraction) {
            Ok(f) => f,
            Err(SigprocError::ZeroPower) => continue,
            Err(e) => return Err(DecompError::from(e).into()),
        };
        if frequency_hz < cfg.band_hz.0 || frequency_hz > cfg.band_hz.1 {
            continue;
        }

        let envelope: Vec<f64> = score.iter().map(|z| z.norm()).collect();
        let peak = envelope.iter().fold(0.0_f64, |a, &v| a.max(v));
        if peak <= 0.0 {
            continue;
        }
        let normalized: Vec<f64> = envelope.iter().map(|v| v / peak).collect();
        let fit = match sigproc::fit_exponential(&times, &normalized) {
            Ok(fit) => fit,
            // A zero sample in the envelope means it is not an exponential.
            Err(SigprocError::NonPositiveAmplitude { .. }) => continue,
            Err(e) => return Err(DecompError::from(e).into()),
        };
        if fit.mse >= cfg.max_regression_mse || fit.mse.is_nan() {
            continue;
        }

        let column: Vec<Complex64> = decomposition.w.column(cpc_index).iter().copied().collect();
        let rotated = match rotate_to_reference(&column) {
            Ok(r) => r,
            Err(ObservationError::ZeroShape) => continue,
            Err(e) => return Err(e),
        };
        let scale = rotated
            .iter()
            .map(|g| g.norm())
            .fold(0.0_f64, f64::max);
        let phasors: Vec<Complex64> = rotated.iter().map(|g| g / scale).collect();
        debug_assert_eq!(phasors.len(), m);

        observations.push(ModeObservation {
            frequency_hz,
            decay_rate: fit.beta,
            phasors,
            window_index: window.index(),
            window_t_start: window.t_start(),
            cpc_index,
            regression_mse: fit.mse,
        });
    }
    Ok(observations)
}

/// Runs Part I over every sliding window of the channel set.
///
/// Observations are ordered by `(window_index, cpc_index)` regardless of
/// how the windows are scheduled.
pub fn run_part1(
    channels: &ChannelSet,
    cfg: &PipelineConfig,
) -> Result<ObservationSet, ObservationError> {
    cfg.validate()?;
    let windows = channels.sliding_windows(cfg.window_length_s, cfg.window_step_s)?;
    let mut observations = Vec::new();
    for window in &windows {
        observations.extend(extract_observations(window, cfg)?);
    }
    Ok(ObservationSet {
        channel_ids: channels.channel_ids().to_vec(),
        observations,
    })
}

mod phasor_pairs {
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
