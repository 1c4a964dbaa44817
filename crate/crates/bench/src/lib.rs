//! Scenario builders shared by the pipeline benchmarks.

use modemeter_core::synth::{EventSpec, ModeSpec, ScenarioSpec};
use modemeter_core::timeseries::ChannelSet;
use modemeter_core::Complex64;

/// A ringdown with `channels` channels and three damped modes, `duration_s`
/// long at 50 Hz, with a little ambient noise.
pub fn ringdown_scenario(channels: usize, duration_s: f64) -> ScenarioSpec {
    let shape = |seed: usize| -> Vec<Complex64> {
        (0..channels)
            .map(|i| {
                let phase = (i * seed) as f64 * 0.7;
                Complex64::from_polar(0.3 + 0.7 * ((i + seed) % 3) as f64 / 2.0, phase)
            })
            .collect()
    };
    let modes = vec![
        ModeSpec {
            frequency_hz: 0.3,
            sigma: -0.12,
            shape: shape(1),
            excitation: Complex64::new(1.0, 0.1),
        },
        ModeSpec {
            frequency_hz: 0.5,
            sigma: -0.2,
            shape: shape(2),
            excitation: Complex64::new(0.9, -0.2),
        },
        ModeSpec {
            frequency_hz: 0.7,
            sigma: -0.3,
            shape: shape(3),
            excitation: Complex64::new(0.8, 0.3),
        },
    ];
    let events = (0..(duration_s / 20.0).ceil() as usize)
        .map(|e| EventSpec {
            time_s: 20.0 * e as f64,
            multipliers: match e % 3 {
                0 => vec![1.0, 0.1, 0.1],
                1 => vec![0.1, 1.0, 0.1],
                _ => vec![0.1, 0.1, 1.0],
            },
        })
        .collect();
    ScenarioSpec {
        modes,
        events,
        duration_s,
        sample_rate_hz: 50.0,
        noise_std: 0.005,
        trend: None,
        rng_seed: 17,
        channel_ids: None,
    }
}

/// Renders the benchmark scenario into channel data.
pub fn ringdown_channels(channels: usize, duration_s: f64) -> ChannelSet {
    modemeter_core::synth::generate(&ringdown_scenario(channels, duration_s))
        .expect("benchmark scenario is valid")
}
