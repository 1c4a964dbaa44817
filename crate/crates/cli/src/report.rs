//! Plot-ready output documents: frequency/decay histograms with per-cluster
//! membership shares, per-channel 2-D phasor histograms, and the
//! detection-time track. All structures serialize deterministically so
//! fixed inputs and seeds give byte-identical files.

use modemeter_core::clustering::{EstimatesReport, ModeEstimate};
use modemeter_core::observation::ObservationSet;
use serde::{Deserialize, Serialize};

/// Wraps an output body with run provenance. The timestamp is omitted under
/// `--reproducible`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Timestamped<T> {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generated_at_unix_s: Option<u64>,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlotData {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generated_at_unix_s: Option<u64>,
    pub channel_count: usize,
    pub band_hz: [f64; 2],
    /// Frequency of each estimate, indexed like the cluster labels below.
    pub estimate_frequencies: Vec<f64>,
    pub frequency_histogram: ClusteredHistogram,
    pub decay_histogram: ClusteredHistogram,
    pub phasor_histograms: Vec<PhasorHistogram>,
    pub detection_track: Vec<DetectionPoint>,
}

/// A 1-D histogram with the total count per bin plus each cluster's share.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClusteredHistogram {
    pub bin_edges: Vec<f64>,
    pub total: Vec<u64>,
    /// `per_cluster[c][bin]`.
    pub per_cluster: Vec<Vec<u64>>,
}

/// A 2-D histogram over the complex plane of one channel's phasors.
#[derive(Debug, Serialize, Deserialize)]
pub struct PhasorHistogram {
    pub channel_id: String,
    pub re_edges: Vec<f64>,
    pub im_edges: Vec<f64>,
    /// `total[re_bin][im_bin]`.
    pub total: Vec<Vec<u64>>,
    /// `per_cluster[c][re_bin][im_bin]`.
    pub per_cluster: Vec<Vec<Vec<u64>>>,
}

/// Where in time each observation was detected and which cluster absorbed
/// it.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub window_index: usize,
    pub window_t_start: f64,
    pub frequency_hz: f64,
    /// Index into the estimates list; absent for observations no estimate
    /// claims (possible after merging edge cases).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cluster: Option<usize>,
}

const FREQUENCY_BIN_HZ: f64 = 0.05;
const DECAY_BINS: usize = 24;
const PHASOR_RANGE: f64 = 1.1;
const PHASOR_BIN: f64 = 0.1;

/// Rebuilds the estimates report around a merged estimate list.
pub fn with_merged_estimates(
    output: &modemeter_core::ClusterOutput,
    merged: &[ModeEstimate],
    set: &ObservationSet,
) -> EstimatesReport {
    EstimatesReport::from_parts(
        merged,
        set,
        output.selected_k,
        output.mean_silhouette,
        output.low_confidence,
        output.scaling.clone(),
    )
}

pub fn build_plot_data(
    set: &ObservationSet,
    estimates: &[ModeEstimate],
    band_hz: (f64, f64),
    generated_at_unix_s: Option<u64>,
) -> PlotData {
    let q = set.observations.len();
    let k = estimates.len();
    let mut cluster_of = vec![None::<usize>; q];
    for (e_index, estimate) in estimates.iter().enumerate() {
        for &member in &estimate.member_indices {
            if member < q {
                cluster_of[member] = Some(e_index);
            }
        }
    }

    let frequencies: Vec<f64> = set.observations.iter().map(|o| o.frequency_hz).collect();
    let decays: Vec<f64> = set.observations.iter().map(|o| o.decay_rate).collect();

    let nbins = (((band_hz.1 - band_hz.0) / FREQUENCY_BIN_HZ).ceil() as usize).max(1);
    let band_edges: Vec<f64> = (0..=nbins)
        .map(|b| band_hz.0 + b as f64 * FREQUENCY_BIN_HZ)
        .collect();
    let frequency_histogram = clustered_histogram(&frequencies, &cluster_of, k, band_edges);

    let (lo, hi) = value_range(&decays);
    let width = (hi - lo) / DECAY_BINS as f64;
    let decay_edges: Vec<f64> = (0..=DECAY_BINS).map(|b| lo + b as f64 * width).collect();
    let decay_histogram = clustered_histogram(&decays, &cluster_of, k, decay_edges);

    let axis_bins = (2.0 * PHASOR_RANGE / PHASOR_BIN).round() as usize;
    let axis_edges: Vec<f64> = (0..=axis_bins)
        .map(|b| -PHASOR_RANGE + b as f64 * PHASOR_BIN)
        .collect();
    let phasor_histograms = set
        .channel_ids
        .iter()
        .enumerate()
        .map(|(ch, id)| {
            let mut total = vec![vec![0u64; axis_bins]; axis_bins];
            let mut per_cluster = vec![vec![vec![0u64; axis_bins]; axis_bins]; k];
            for (obs, cluster) in set.observations.iter().zip(&cluster_of) {
                let g = obs.phasors[ch];
                let (Some(re_bin), Some(im_bin)) =
                    (axis_bin(g.re, axis_bins), axis_bin(g.im, axis_bins))
                else {
                    continue;
                };
                total[re_bin][im_bin] += 1;
                if let Some(c) = cluster {
                    per_cluster[*c][re_bin][im_bin] += 1;
                }
            }
            PhasorHistogram {
                channel_id: id.clone(),
                re_edges: axis_edges.clone(),
                im_edges: axis_edges.clone(),
                total,
                per_cluster,
            }
        })
        .collect();

    let detection_track = set
        .observations
        .iter()
        .zip(&cluster_of)
        .map(|(obs, cluster)| DetectionPoint {
            window_index: obs.window_index,
            window_t_start: obs.window_t_start,
            frequency_hz: obs.frequency_hz,
            cluster: *cluster,
        })
        .collect();

    PlotData {
        generated_at_unix_s,
        channel_count: set.channel_ids.len(),
        band_hz: [band_hz.0, band_hz.1],
        estimate_frequencies: estimates.iter().map(|e| e.frequency_hz).collect(),
        frequency_histogram,
        decay_histogram,
        phasor_histograms,
        detection_track,
    }
}

fn value_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, lo + 0.5);
    }
    (lo, hi)
}

fn axis_bin(value: f64, bins: usize) -> Option<usize> {
    if !value.is_finite() || !(-PHASOR_RANGE..=PHASOR_RANGE).contains(&value) {
        return None;
    }
    Some((((value + PHASOR_RANGE) / PHASOR_BIN) as usize).min(bins - 1))
}

fn clustered_histogram(
    values: &[f64],
    cluster_of: &[Option<usize>],
    k: usize,
    bin_edges: Vec<f64>,
) -> ClusteredHistogram {
    let bins = bin_edges.len() - 1;
    let lo = bin_edges[0];
    let hi = *bin_edges.last().expect("non-empty edges");
    let width = (hi - lo) / bins as f64;
    let mut total = vec![0u64; bins];
    let mut per_cluster = vec![vec![0u64; bins]; k];
    for (value, cluster) in values.iter().zip(cluster_of) {
        if !value.is_finite() || *value < lo || *value > hi {
            continue;
        }
        let bin = (((value - lo) / width) as usize).min(bins - 1);
        total[bin] += 1;
        if let Some(c) = cluster {
            per_cluster[*c][bin] += 1;
        }
    }
    ClusteredHistogram {
        bin_edges,
        total,
        per_cluster,
    }
}
