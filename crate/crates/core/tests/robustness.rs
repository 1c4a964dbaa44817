//! Seed sweep over the three-mode recovery scenario: the outcome must not
//! depend on the particular noise realization or clustering seed.
use modemeter_core::clustering::{self, ClusterConfig};
use modemeter_core::observation::{self, PipelineConfig};
use modemeter_core::synth::{generate, EventSpec, ModeSpec, ScenarioSpec};
use modemeter_core::Complex64;

fn complex(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn truths() -> Vec<(f64, f64, Vec<Complex64>)> {
    vec![
        (
            0.3,
            -0.1,
            vec![complex(1.0, 0.0), complex(0.8, 0.1), complex(0.6, 0.0), complex(0.5, -0.1)],
        ),
        (
            0.5,
            -0.13,
            vec![complex(-0.4, 0.05), complex(-0.4, 0.0), complex(0.7, -0.05), complex(1.0, 0.0)],
        ),
        (
            0.7,
            -0.16,
            vec![complex(0.9, 0.0), complex(-1.0, 0.0), complex(0.0, 0.0), complex(0.0, 0.0)],
        ),
    ]
}

fn scenario(noise_std: f64, rng_seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        modes: truths()
            .into_iter()
            .map(|(frequency_hz, sigma, shape)| ModeSpec {
                frequency_hz,
                sigma,
                shape,
                excitation: complex(1.0, 0.3),
            })
            .collect(),
        events: vec![
            EventSpec { time_s: 0.0, multipliers: vec![1.0, 0.1, 0.08] },
            EventSpec { time_s: 20.0, multipliers: vec![0.1, 1.0, 0.1] },
            EventSpec { time_s: 40.0, multipliers: vec![0.05, 0.06, 1.0] },
            EventSpec { time_s: 60.0, multipliers: vec![1.0, 0.12, 0.1] },
        ],
        duration_s: 80.0,
        sample_rate_hz: 50.0,
        noise_std,
        trend: None,
        rng_seed,
        channel_ids: Some(vec!["g1".into(), "g2".into(), "g3".into(), "g4".into()]),
    }
}

fn shape_angle(estimate: &[Complex64], truth: &[Complex64]) -> f64 {
    let cross: Complex64 = estimate.iter().zip(truth).map(|(e, t)| e.conj() * t).sum();
    let rotation = cross / cross.norm();
    let t_max = truth.iter().map(|t| t.norm()).fold(0.0_f64, f64::max);
    let mut worst = 0.0_f64;
    for (e, t) in estimate.iter().zip(truth) {
        if t.norm() < 0.05 * t_max {
            continue;
        }
        worst = worst.max(((e * rotation) * t.conj()).arg().abs());
    }
    worst
}

#[test]
fn robustness_sweep() {
    let peak = generate(&scenario(0.0, 0)).unwrap().samples().amax();
    let mut failures = Vec::new();
    for noise_seed in [1u64, 77, 500, 2024, 31337] {
        for cluster_seed in [0u64, 9, 123] {
            let spec = scenario(0.02 * peak, noise_seed);
            let cs = generate(&spec).unwrap();
            let set = observation::run_part1(&cs, &PipelineConfig::default()).unwrap();
            let cfg = ClusterConfig { seed: cluster_seed, ..ClusterConfig::default() };
            let output = clustering::select_and_cluster(&set, &cfg).unwrap();
            let merged = clustering::merge_replicates(&output.estimates, 15.0, 0.05);
            let mut ok = output.selected_k >= 3 && merged.len() >= 3;
            let mut detail = format!(
                "noise {noise_seed} cluster {cluster_seed}: q={} k={} merged={}",
                set.len(),
                output.selected_k,
                merged.len()
            );
            if ok {
                for (f_truth, _, shape_truth) in &truths() {
                    let best = merged
                        .iter()
                        .take(3)
                        .min_by(|a, b| {
                            (a.frequency_hz - f_truth)
                                .abs()
                                .total_cmp(&(b.frequency_hz - f_truth).abs())
                        })
                        .unwrap();
                    let df = (best.frequency_hz - f_truth).abs();
                    let angle = shape_angle(&best.shape, shape_truth).to_degrees();
                    detail.push_str(&format!(" [{f_truth}: df {df:.3} a {angle:.0}]"));
                    if df > 0.05 || angle > 15.0 {
                        ok = false;
                    }
                }
            }
            println!("{} {detail}", if ok { "OK  " } else { "FAIL" });
            if !ok {
                failures.push(detail);
            }
        }
    }
    assert!(failures.is_empty(), "{} fragile combos: {failures:?}", failures.len());
}
