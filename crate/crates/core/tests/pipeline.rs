//! End-to-end library runs: synthetic ringdown in, averaged mode estimates
//! out, checked against the injected ground truth.

use modemeter_core::{
    clustering::{self, ClusterConfig},
    observation::{self, PipelineConfig},
    synth::{generate, EventSpec, ModeSpec, ScenarioSpec},
    Complex64,
};

fn complex(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Optimal global rotation of `estimate` onto `truth`, then the worst
/// per-phasor angle error (radians) and worst relative magnitude error,
/// ignoring truth phasors below 5% of the largest.
fn shape_errors(estimate: &[Complex64], truth: &[Complex64]) -> (f64, f64) {
    let cross: Complex64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| e.conj() * t)
        .sum();
    let rotation = cross / cross.norm();
    let t_max = truth.iter().map(|t| t.norm()).fold(0.0_f64, f64::max);
    let e_max = estimate.iter().map(|e| e.norm()).fold(0.0_f64, f64::max);
    let mut worst_angle = 0.0_f64;
    let mut worst_magnitude = 0.0_f64;
    for (e, t) in estimate.iter().zip(truth) {
        if t.norm() < 0.05 * t_max {
            continue;
        }
        let aligned = e * rotation;
        worst_angle = worst_angle.max((aligned * t.conj()).arg().abs());
        // Compare unit-max-normalized magnitudes.
        worst_magnitude =
            worst_magnitude.max(((aligned.norm() / e_max) - t.norm() / t_max).abs() / (t.norm() / t_max));
    }
    (worst_angle, worst_magnitude)
}

#[test]
fn single_mode_end_to_end() {
    let truth_shape = vec![
        complex(1.0, 0.0),
        complex(-0.8, 0.0),
        complex(0.9, 0.0),
        complex(-0.7, 0.0),
    ];
    let spec = ScenarioSpec {
        modes: vec![ModeSpec {
            frequency_hz: 0.5,
            sigma: -0.3,
            shape: truth_shape.clone(),
            excitation: complex(1.0, 0.0),
        }],
        events: vec![EventSpec {
            time_s: 0.0,
            multipliers: vec![1.0],
        }],
        duration_s: 20.0,
        sample_rate_hz: 50.0,
        noise_std: 0.0,
        trend: None,
        rng_seed: 0,
        channel_ids: None,
    };
    let cs = generate(&spec).unwrap();
    let set = observation::run_part1(&cs, &PipelineConfig::default()).unwrap();
    assert!(!set.is_empty());
    let output = clustering::select_and_cluster(&set, &ClusterConfig::default()).unwrap();
    assert_eq!(output.estimates.len(), 1, "k = {}", output.selected_k);

    let estimate = &output.estimates[0];
    assert!((estimate.frequency_hz - 0.5).abs() <= 0.05);
    assert!((estimate.decay_rate + 0.3).abs() <= 0.3 * 0.3);
    let (angle, magnitude) = shape_errors(&estimate.shape, &truth_shape);
    assert!(angle <= 10.0_f64.to_radians(), "angle error {:.2} deg", angle.to_degrees());
    assert!(magnitude <= 0.10, "magnitude error {:.1}%", magnitude * 100.0);
}

fn three_mode_scenario(noise_std: f64) -> (ScenarioSpec, Vec<(f64, f64, Vec<Complex64>)>) {
    let truths = vec![
        (
            0.3,
            -0.1,
            vec![
                complex(1.0, 0.0),
                complex(0.8, 0.1),
                complex(0.6, 0.0),
                complex(0.5, -0.1),
            ],
        ),
        (
            0.5,
            -0.13,
            vec![
                complex(-0.4, 0.05),
                complex(-0.4, 0.0),
                complex(0.7, -0.05),
                complex(1.0, 0.0),
            ],
        ),
        (
            0.7,
            -0.16,
            vec![
                complex(0.9, 0.0),
                complex(-1.0, 0.0),
                complex(0.0, 0.0),
                complex(0.0, 0.0),
            ],
        ),
    ];
    let modes = truths
        .iter()
        .map(|(f, sigma, shape)| ModeSpec {
            frequency_hz: *f,
            sigma: *sigma,
            shape: shape.clone(),
            excitation: complex(1.0, 0.3),
        })
        .collect();
    let spec = ScenarioSpec {
        modes,
        // Each disturbance excites one mode much harder, the way faults at
        // different locations do; the last one stirs everything. Components
        // from heavily mixed windows fail the regression gate by design, so
        // dominance is what makes windows productive.
        events: vec![
            EventSpec {
                time_s: 0.0,
                multipliers: vec![1.0, 0.1, 0.08],
            },
            EventSpec {
                time_s: 20.0,
                multipliers: vec![0.1, 1.0, 0.1],
            },
            EventSpec {
                time_s: 40.0,
                multipliers: vec![0.05, 0.06, 1.0],
            },
            EventSpec {
                time_s: 60.0,
                multipliers: vec![1.0, 0.12, 0.1],
            },
        ],
        duration_s: 80.0,
        sample_rate_hz: 50.0,
        noise_std,
        trend: None,
        rng_seed: 2024,
        channel_ids: Some(vec!["g1".into(), "g2".into(), "g3".into(), "g4".into()]),
    };
    (spec, truths)
}

#[test]
fn three_modes_end_to_end() {
    // Noise at 2% of the noise-free peak.
    let (quiet, _) = three_mode_scenario(0.0);
    let peak = generate(&quiet).unwrap().samples().amax();
    let (spec, truths) = three_mode_scenario(0.02 * peak);

    let cs = generate(&spec).unwrap();
    let set = observation::run_part1(&cs, &PipelineConfig::default()).unwrap();
    // The regression gate is strict: windows where the ringdowns mix or the
    // envelope has decayed into the noise produce nothing.
    assert!(set.len() >= 10, "only {} observations", set.len());
    let output = clustering::select_and_cluster(&set, &ClusterConfig::default()).unwrap();
    assert!(output.selected_k >= 3, "selected k = {}", output.selected_k);

    let merged = clustering::merge_replicates(&output.estimates, 15.0, 0.05);
    assert!(merged.len() >= 3);
    for (f_truth, _, shape_truth) in &truths {
        let best = merged
            .iter()
            .take(3)
            .min_by(|a, b| {
                (a.frequency_hz - f_truth)
                    .abs()
                    .total_cmp(&(b.frequency_hz - f_truth).abs())
            })
            .unwrap();
        assert!(
            (best.frequency_hz - f_truth).abs() <= 0.05,
            "no dominant estimate near {f_truth} Hz (closest {})",
            best.frequency_hz
        );
        let (angle, _) = shape_errors(&best.shape, shape_truth);
        assert!(
            angle <= 15.0_f64.to_radians(),
            "shape angle error {:.1} deg at {f_truth} Hz",
            angle.to_degrees()
        );
    }
}

#[test]
fn detection_times_follow_events() {
    let (spec, _) = three_mode_scenario(0.0);
    let cs = generate(&spec).unwrap();
    let set = observation::run_part1(&cs, &PipelineConfig::default()).unwrap();
    // Observations cluster in time shortly after each disturbance.
    for event_time in [0.0, 20.0, 40.0, 60.0] {
        let count = set
            .observations
            .iter()
            .filter(|o| o.window_t_start >= event_time && o.window_t_start < event_time + 10.0)
            .count();
        assert!(count > 0, "no observations after the event at {event_time} s");
    }
}
