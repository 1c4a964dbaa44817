//! Part II of the method: cluster observation points with k-Means, select
//! the number of clusters by silhouette score, and report cluster centroids
//! as averaged mode estimates.
//!
//! Observations are standardized dimension-by-dimension (zero mean, unit
//! variance) before clustering so the frequency, decay and phasor
//! coordinates weigh in comparably; the affine transform is recorded and
//! inverted when centroids are mapped back to physical units. Dimensions
//! whose spread is numerically zero are centered but not scaled.
//!
//! The silhouette score is undefined for a single cluster, so `k` starts at
//! 2; when even the best silhouette stays below `min_silhouette` the
//! observations are reported as one low-confidence cluster instead.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{ModeObservation, ObservationSet};

type Complex64 = Complex<f64>;

/// Dimensions with standard deviation below `1e-9 * max(1, |mean|)` count
/// as constant: they are centered but left unscaled, so numerical noise is
/// never inflated into cluster structure.
const STD_FLOOR_REL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot make {k} clusters from {q} points")]
    TooManyClusters { k: usize, q: usize },
    #[error("silhouette is undefined for fewer than 2 clusters")]
    UndefinedSilhouette,
    #[error("no observations to cluster")]
    NoObservations,
    #[error("assignment length {got} does not match point count {want}")]
    MismatchedAssignment { got: usize, want: usize },
}

/// Per-dimension affine transform applied before clustering:
/// `scaled = (value - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimScale {
    pub mean: f64,
    pub scale: f64,
    /// True when the dimension's spread was numerically zero and it was
    /// left unscaled.
    pub constant: bool,
}

/// The `Q x (2M+2)` observation matrix plus its standardization record.
#[derive(Debug, Clone)]
pub struct ObservationMatrix {
    /// Original, physical-unit points; one row per observation.
    pub points: DMatrix<f64>,
    /// Standardized points actually used for clustering.
    pub scaled: DMatrix<f64>,
    /// The transform taking `points` to `scaled`, per dimension.
    pub scaling: Vec<DimScale>,
}

impl ObservationMatrix {
    pub fn from_observations(observations: &[ModeObservation]) -> Result<Self, ClusterError> {
        if observations.is_empty() {
            return Err(ClusterError::NoObservations);
        }
        let dims = observations[0].as_point().len();
        let q = observations.len();
        let points = DMatrix::from_fn(q, dims, |i, j| observations[i].as_point()[j]);
        let mut scaling = Vec::with_capacity(dims);
        let mut scaled = points.clone();
        for j in 0..dims {
            let column = points.column(j);
            let mean = column.sum() / q as f64;
            let variance = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / q as f64;
            let std = variance.sqrt();
            let constant = std <= STD_FLOOR_REL * mean.abs().max(1.0);
            let scale = if constant { 1.0 } else { std };
            scaling.push(DimScale {
                mean,
                scale,
                constant,
            });
            scaled
                .column_mut(j)
                .iter_mut()
                .for_each(|v| *v = (*v - mean) / scale);
        }
        Ok(Self {
            points,
            scaled,
            scaling,
        })
    }

    /// Maps a scaled-space point back to physical units.
    pub fn unscale(&self, scaled_point: &[f64]) -> Vec<f64> {
        scaled_point
            .iter()
            .zip(&self.scaling)
            .map(|(v, s)| v * s.scale + s.mean)
            .collect()
    }
}

/// k-Means output. `centroids` is `k x D` in the same space as the input
/// points; `wcss_history` records the objective after every Lloyd iteration.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignment: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
    pub iterations: usize,
    pub wcss_history: Vec<f64>,
}

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Lloyd iterations from k-Means++ seeding, deterministic for a given seed.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<KmeansResult, ClusterError> {
    let q = points.nrows();
    if k == 0 || k > q {
        return Err(ClusterError::TooManyClusters { k, q });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_seed(points, k, &mut rng);
    Ok(kmeans_with_init(points, &init))
}

/// Lloyd iterations from explicit starting centroids (`k x D`).
///
/// Ties in the nearest-centroid assignment break toward the lowest centroid
/// index, so the outcome does not depend on the order of the input rows.
/// Empty clusters are re-seeded to the point farthest from its assigned
/// centroid.
pub fn kmeans_with_init(points: &DMatrix<f64>, init: &DMatrix<f64>) -> KmeansResult {
    let q = points.nrows();
    let k = init.nrows();
    let mut centroids = init.clone();
    let mut assignment = vec![usize::MAX; q];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        // Assignment step.
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = row_distance_sq(points, i, &centroids, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }

        // Re-seed empty clusters to the farthest point.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let farthest = (0..q)
                .max_by(|&a, &b| {
                    let da = row_distance_sq(points, a, &centroids, assignment[a]);
                    let db = row_distance_sq(points, b, &centroids, assignment[b]);
                    da.total_cmp(&db)
                })
                .expect("q >= k >= 1");
            counts[assignment[farthest]] -= 1;
            assignment[farthest] = c;
            counts[c] = 1;
            for j in 0..points.ncols() {
                centroids[(c, j)] = points[(farthest, j)];
            }
            changed = true;
        }

        // Update step: centroids become member means.
        centroids.fill(0.0);
        for i in 0..q {
            for j in 0..points.ncols() {
                centroids[(assignment[i], j)] += points[(i, j)];
            }
        }
        for c in 0..k {
            let count = counts[c] as f64;
            for j in 0..points.ncols() {
                centroids[(c, j)] /= count;
            }
        }

        let wcss: f64 = (0..q)
            .map(|i| row_distance_sq(points, i, &centroids, assignment[i]))
            .sum();
        wcss_history.push(wcss);

        if !changed || iterations >= MAX_LLOYD_ITERATIONS {
            break;
        }
    }

    let wcss = *wcss_history.last().expect("at least one iteration");
    KmeansResult {
        assignment,
        centroids,
        wcss,
        iterations,
        wcss_history,
    }
}

fn plus_plus_seed(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = points.nrows();
    let d = points.ncols();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..q));
    let mut dist_sq: Vec<f64> = (0..q)
        .map(|i| point_distance_sq(points, i, chosen[0]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = q - 1;
            for (i, &w) in dist_sq.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every point coincides with a chosen centroid; any point works.
            rng.random_range(0..q)
        };
        chosen.push(next);
        for (i, d2) in dist_sq.iter_mut().enumerate() {
            *d2 = d2.min(point_distance_sq(points, i, next));
        }
    }
    DMatrix::from_fn(k, d, |c, j| points[(chosen[c], j)])
}

fn row_distance_sq(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..points.ncols() {
        let d = points[(i, j)] - centroids[(c, j)];
        acc += d * d;
    }
    acc
}

fn point_distance_sq(points: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..points.ncols() {
        let d = points[(a, j)] - points[(b, j)];
        acc += d * d;
    }
    acc
}

/// Mean silhouette `(b - a) / max(a, b)` over all points, Euclidean metric.
/// Points in singleton clusters score 0 by convention.
pub fn silhouette_score(points: &DMatrix<f64>, assignment: &[usize]) -> Result<f64, ClusterError> {
    let q = points.nrows();
    if assignment.len() != q {
        return Err(ClusterError::MismatchedAssignment {
            got: assignment.len(),
            want: q,
        });
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ClusterError::UndefinedSilhouette);
    }

    let mut total = 0.0;
    for i in 0..q {
        let own = assignment[i];
        if counts[own] == 1 {
            continue; // contributes silhouette 0
        }
        let mut sums = vec![0.0_f64; k];
        for j in 0..q {
            if i == j {
                continue;
            }
            sums[assignment[j]] += point_distance_sq(points, i, j).sqrt();
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / q as f64)
}

/// An averaged mode: a cluster centroid read back as frequency, decay rate
/// and mode shape, with membership statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEstimate {
    pub frequency_hz: f64,
    /// 1/s; negative = decaying.
    pub decay_rate: f64,
    /// One complex phasor per channel.
    pub shape: Vec<Complex64>,
    pub member_count: usize,
    /// Indices into the observation list this estimate averages.
    pub member_indices: Vec<usize>,
    /// Standard deviation of the member observations per point dimension,
    /// in physical units.
    pub dispersion: Vec<f64>,
}

/// Tuning for [`select_and_cluster`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Independent k-Means restarts per candidate `k`; best objective wins.
    pub restarts: usize,
    pub seed: u64,
    /// Below this best silhouette the result collapses to one
    /// low-confidence cluster.
    pub min_silhouette: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 10,
            restarts: 10,
            seed: 0,
            min_silhouette: 0.25,
        }
    }
}

/// Full Part II outcome.
#[derive(Debug, Clone)]
pub struct ClusterOutput {
    /// Estimates sorted by member count, largest first.
    pub estimates: Vec<ModeEstimate>,
    /// Per-observation estimate index (after sorting).
    pub assignment: Vec<usize>,
    pub selected_k: usize,
    /// Mean silhouette of the selected clustering; `None` when fewer than
    /// two clusters were ever comparable.
    pub mean_silhouette: Option<f64>,
    /// Set when the single-cluster fallback fired (or only one observation
    /// existed), meaning no multi-cluster structure was supported.
    pub low_confidence: bool,
    /// Standardization applied before clustering, for reproducibility.
    pub scaling: Vec<DimScale>,
}

/// Clusters the observations for every `k` in `[k_min, min(k_max, Q-1)]`,
/// keeps the best-objective restart per `k`, picks the `k` with the highest
/// mean silhouette and maps centroids back to [`ModeEstimate`]s.
pub fn select_and_cluster(
    set: &ObservationSet,
    cfg: &ClusterConfig,
) -> Result<ClusterOutput, ClusterError> {
    let observations = &set.observations;
    if observations.is_empty() {
        return Err(ClusterError::NoObservations);
    }
    let matrix = ObservationMatrix::from_observations(observations)?;
    let q = observations.len();

    if q == 1 {
        let estimate = estimate_from_members(&matrix, &[0]);
        return Ok(ClusterOutput {
            estimates: vec![estimate],
            assignment: vec![0],
            selected_k: 1,
            mean_silhouette: None,
            low_confidence: true,
            scaling: matrix.scaling.clone(),
        });
    }

    // When every dimension's spread is numerically zero the observations
    // are identical to measurement precision; silhouette scores computed on
    // the leftover float noise are meaningless (the score is scale
    // invariant), so this is the one-cluster case by definition.
    if matrix.scaling.iter().all(|s| s.constant) {
        return Ok(single_cluster_fallback(&matrix, None));
    }

    let k_max = cfg.k_max.min(q - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, usize, KmeansResult)> = None;
    for k in cfg.k_min..=k_max {
        let mut best_run: Option<KmeansResult> = None;
        for _ in 0..cfg.restarts.max(1) {
            let sub_seed: u64 = rng.random();
            let run = kmeans(&matrix.scaled, k, sub_seed)?;
            if best_run.as_ref().is_none_or(|b| run.wcss < b.wcss) {
                best_run = Some(run);
            }
        }
        let run = best_run.expect("at least one restart");
        let score = match silhouette_score(&matrix.scaled, &run.assignment) {
            Ok(score) => score,
            // A run that degenerated below two populated clusters (possible
            // only at the iteration cap) is simply not a candidate.
            Err(ClusterError::UndefinedSilhouette) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, k, run));
        }
    }

    let Some((score, selected_k, run)) = best else {
        // No comparable clustering exists: k_max < k_min (e.g. Q == 2), or
        // every candidate degenerated.
        return Ok(single_cluster_fallback(&matrix, None));
    };
    if score < cfg.min_silhouette {
        return Ok(single_cluster_fallback(&matrix, Some(score)));
    }

    // Order clusters by population (ties by frequency) and relabel.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); selected_k];
    for (i, &c) in run.assignment.iter().enumerate() {
        members[c].push(i);
    }
    let mut estimates: Vec<(usize, ModeEstimate)> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, m)| (c, estimate_from_centroid(&matrix, &run, c, m)))
        .collect();
    estimates.sort_by(|a, b| {
        b.1.member_count
            .cmp(&a.1.member_count)
            .then(a.1.frequency_hz.total_cmp(&b.1.frequency_hz))
    });
    let mut relabel = vec![usize::MAX; selected_k];
    for (new_index, (old_index, _)) in estimates.iter().enumerate() {
        relabel[*old_index] = new_index;
    }
    let assignment: Vec<usize> = run.assignment.iter().map(|&c| relabel[c]).collect();

    Ok(ClusterOutput {
        estimates: estimates.into_iter().map(|(_, e)| e).collect(),
        assignment,
        selected_k,
        mean_silhouette: Some(score),
        low_confidence: false,
        scaling: matrix.scaling.clone(),
    })
}

fn single_cluster_fallback(matrix: &ObservationMatrix, score: Option<f64>) -> ClusterOutput {
    let all: Vec<usize> = (0..matrix.points.nrows()).collect();
    let estimate = estimate_from_members(matrix, &all);
    ClusterOutput {
        assignment: vec![0; matrix.points.nrows()],
        estimates: vec![estimate],
        selected_k: 1,
        mean_silhouette: score,
        low_confidence: true,
        scaling: matrix.scaling.clone(),
    }
}

/// Builds an estimate from a converged centroid (scaled space), with
/// dispersion measured over the members in physical units.
fn estimate_from_centroid(
    matrix: &ObservationMatrix,
    run: &KmeansResult,
    cluster: usize,
    members: &[usize],
) -> ModeEstimate {
    let scaled_centroid: Vec<f64> = run.centroids.row(cluster).iter().copied().collect();
    let centroid = matrix.unscale(&scaled_centroid);
    build_estimate(matrix, &centroid, members)
}

/// Builds an estimate whose centroid is the plain mean of the members.
fn estimate_from_members(matrix: &ObservationMatrix, members: &[usize]) -> ModeEstimate {
    let dims = matrix.points.ncols();
    let mut centroid = vec![0.0; dims];
    for &i in members {
        for (j, slot) in centroid.iter_mut().enumerate() {
            *slot += matrix.points[(i, j)];
        }
    }
    centroid.iter_mut().for_each(|v| *v /= members.len() as f64);
    build_estimate(matrix, &centroid, members)
}

fn build_estimate(matrix: &ObservationMatrix, centroid: &[f64], members: &[usize]) -> ModeEstimate {
    let dims = matrix.points.ncols();
    let mut dispersion = vec![0.0; dims];
    for &i in members {
        for j in 0..dims {
            let d = matrix.points[(i, j)] - centroid[j];
            dispersion[j] += d * d;
        }
    }
    dispersion
        .iter_mut()
        .for_each(|v| *v = (*v / members.len() as f64).sqrt());

    let shape = centroid[2..]
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let mut member_indices = members.to_vec();
    member_indices.sort_unstable();
    ModeEstimate {
        frequency_hz: centroid[0],
        decay_rate: centroid[1],
        shape,
        member_count: members.len(),
        member_indices,
        dispersion,
    }
}

/// Collapses estimates that are replicates of each other: frequencies
/// within `freq_tol_hz` and shapes matching within `angle_tol_deg` per
/// phasor after the optimal global rotation. Phasors below 5% of a shape's
/// largest magnitude carry no stable angle and are skipped by the
/// comparison (two shapes with no commonly significant phasor never
/// merge). Merged estimates re-average their members, weighted by member
/// count.
pub fn merge_replicates(
    estimates: &[ModeEstimate],
    angle_tol_deg: f64,
    freq_tol_hz: f64,
) -> Vec<ModeEstimate> {
    let angle_tol = angle_tol_deg.to_radians();
    let mut merged: Vec<ModeEstimate> = Vec::with_capacity(estimates.len());
    'next: for estimate in estimates {
        for anchor in &mut merged {
            if (anchor.frequency_hz - estimate.frequency_hz).abs() >= freq_tol_hz {
                continue;
            }
            if let Some(rotation) = replicate_rotation(&anchor.shape, &estimate.shape, angle_tol) {
                fold_into(anchor, estimate, rotation);
                continue 'next;
            }
        }
        merged.push(estimate.clone());
    }
    merged.sort_by(|a, b| {
        b.member_count
            .cmp(&a.member_count)
            .then(a.frequency_hz.total_cmp(&b.frequency_hz))
    });
    merged
}

/// Fraction of a shape's largest phasor magnitude below which a phasor's
/// angle is considered unstable and excluded from replicate comparison.
const MERGE_SIGNIFICANCE: f64 = 0.05;

/// The rotation `e^{j theta}` minimizing `sum |a_i - e^{j theta} b_i|^2`,
/// if every commonly significant phasor pair then agrees within
/// `angle_tol`.
fn replicate_rotation(
    a: &[Complex64],
    b: &[Complex64],
    angle_tol: f64,
) -> Option<Complex64> {
    if a.len() != b.len() {
        return None;
    }
    let cross: Complex64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
    if cross.norm() == 0.0 {
        return None;
    }
    let rotation = cross / cross.norm();
    let floor_a = MERGE_SIGNIFICANCE * a.iter().map(|g| g.norm()).fold(0.0_f64, f64::max);
    let floor_b = MERGE_SIGNIFICANCE * b.iter().map(|g| g.norm()).fold(0.0_f64, f64::max);
    let mut compared = false;
    for (x, y) in a.iter().zip(b) {
        if x.norm() <= floor_a || y.norm() <= floor_b {
            continue;
        }
        compared = true;
        let angle = (x * (rotation * y).conj()).arg().abs();
        if angle > angle_tol {
            return None;
        }
    }
    compared.then_some(rotation)
}

fn fold_into(anchor: &mut ModeEstimate, other: &ModeEstimate, rotation: Complex64) {
    let n1 = anchor.member_count as f64;
    let n2 = other.member_count as f64;
    let total = n1 + n2;
    let mix = |a: f64, b: f64| (n1 * a + n2 * b) / total;

    let merged_frequency = mix(anchor.frequency_hz, other.frequency_hz);
    let merged_decay = mix(anchor.decay_rate, other.decay_rate);
    let merged_shape: Vec<Complex64> = anchor
        .shape
        .iter()
        .zip(&other.shape)
        .map(|(a, b)| (*a * n1 + rotation * b * n2) / total)
        .collect();

    // Pooled spread; the rotated shape dimensions approximate the member
    // spread without re-rotating individual members.
    let dispersion: Vec<f64> = anchor
        .dispersion
        .iter()
        .zip(&other.dispersion)
        .map(|(d1, d2)| (mix(d1 * d1, d2 * d2)).sqrt())
        .collect();

    anchor.frequency_hz = merged_frequency;
    anchor.decay_rate = merged_decay;
    anchor.shape = merged_shape;
    anchor.dispersion = dispersion;
    anchor.member_count += other.member_count;
    anchor.member_indices.extend_from_slice(&other.member_indices);
    anchor.member_indices.sort_unstable();
}

/// JSON-facing report for a clustering run: estimates with shapes keyed by
/// channel id plus plot-ready per-estimate blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesReport {
    pub channel_ids: Vec<String>,
    pub selected_k: usize,
    pub mean_silhouette: Option<f64>,
    pub low_confidence: bool,
    pub scaling: Vec<DimScale>,
    pub estimates: Vec<EstimateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub frequency_hz: f64,
    pub decay_rate: f64,
    /// Shape as `[re, im]` pairs keyed by channel id.
    pub shape: BTreeMap<String, [f64; 2]>,
    pub member_count: usize,
    pub member_indices: Vec<usize>,
    pub dispersion: Vec<f64>,
    pub plot: EstimatePlot,
}

/// Plot-ready block: phasor polar coordinates per channel and histograms of
/// the member observations per point dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePlot {
    pub phasor_magnitudes: Vec<f64>,
    pub phasor_angles_deg: Vec<f64>,
    pub member_histograms: Vec<DimHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimHistogram {
    pub dimension: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

const MEMBER_HISTOGRAM_BINS: usize = 12;

impl EstimatesReport {
    pub fn new(output: &ClusterOutput, set: &ObservationSet) -> Self {
        Self::from_parts(
            &output.estimates,
            set,
            output.selected_k,
            output.mean_silhouette,
            output.low_confidence,
            output.scaling.clone(),
        )
    }

    /// Builds the report from an explicit estimate list (e.g. after
    /// replicate merging).
    pub fn from_parts(
        estimates: &[ModeEstimate],
        set: &ObservationSet,
        selected_k: usize,
        mean_silhouette: Option<f64>,
        low_confidence: bool,
        scaling: Vec<DimScale>,
    ) -> Self {
        let dim_names = point_dimension_names(&set.channel_ids);
        let estimates = estimates
            .iter()
            .map(|estimate| {
                let shape: BTreeMap<String, [f64; 2]> = set
                    .channel_ids
                    .iter()
                    .zip(&estimate.shape)
                    .map(|(id, g)| (id.clone(), [g.re, g.im]))
                    .collect();
                let member_points: Vec<Vec<f64>> = estimate
                    .member_indices
                    .iter()
                    .map(|&i| set.observations[i].as_point())
                    .collect();
                let member_histograms = dim_names
                    .iter()
                    .enumerate()
                    .map(|(j, name)| {
                        let values: Vec<f64> =
                            member_points.iter().map(|p| p[j]).collect();
                        let (bin_edges, counts) = histogram(&values, MEMBER_HISTOGRAM_BINS);
                        DimHistogram {
                            dimension: name.clone(),
                            bin_edges,
                            counts,
                        }
                    })
                    .collect();
                EstimateReport {
                    frequency_hz: estimate.frequency_hz,
                    decay_rate: estimate.decay_rate,
                    shape,
                    member_count: estimate.member_count,
                    member_indices: estimate.member_indices.clone(),
                    dispersion: estimate.dispersion.clone(),
                    plot: EstimatePlot {
                        phasor_magnitudes: estimate.shape.iter().map(|g| g.norm()).collect(),
                        phasor_angles_deg: estimate
                            .shape
                            .iter()
                            .map(|g| g.arg().to_degrees())
                            .collect(),
                        member_histograms,
                    },
                }
            })
            .collect();
        Self {
            channel_ids: set.channel_ids.clone(),
            selected_k,
            mean_silhouette,
            low_confidence,
            scaling,
            estimates,
        }
    }
}

/// Names for the `2M+2` point dimensions, aligned with
/// [`ModeObservation::as_point`].
pub fn point_dimension_names(channel_ids: &[String]) -> Vec<String> {
    let mut names = vec!["frequency_hz".to_string(), "decay_rate".to_string()];
    for id in channel_ids {
        names.push(format!("re_{id}"));
        names.push(format!("im_{id}"));
    }
    names
}

/// Equal-width histogram over the value range (one bin when degenerate).
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<u64>) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !lo.is_finite() || !hi.is_finite() {
        return (vec![0.0, 1.0], vec![0]);
    }
    if lo == hi {
        return (vec![lo - 0.5, lo + 0.5], vec![values.len() as u64]);
    }
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let mut bin = ((v - lo) / width) as usize;
        if bin >= bins {
            bin = bins - 1;
        }
        counts[bin] += 1;
    }
    (edges, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(center: &[f64], spread: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, spread).unwrap();
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| c + normal.sample(rng))
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn identical_points_single_cluster() {
        let points = DMatrix::from_element(5, 3, 2.5);
        let result = kmeans(&points, 1, 0).unwrap();
        assert_eq!(result.assignment, vec![0; 5]);
        assert_eq!(result.wcss, 0.0);
        for j in 0..3 {
            assert_eq!(result.centroids[(0, j)], 2.5);
        }
    }

    #[test]
    fn two_blobs_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Separation 100x the spread.
        let mut rows = blob(&[0.0, 0.0], 1.0, 40, &mut rng);
        rows.extend(blob(&[100.0, 100.0], 1.0, 40, &mut rng));
        let points = to_matrix(&rows);
        let result = kmeans(&points, 2, 17).unwrap();
        let first = result.assignment[0];
        assert!(result.assignment[..40].iter().all(|&a| a == first));
        assert!(result.assignment[40..].iter().all(|&a| a == 1 - first));
    }

    #[test]
    fn k_equals_q_gives_zero_wcss() {
        let points = DMatrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        let result = kmeans(&points, 6, 3).unwrap();
        assert!(result.wcss < 1e-30);
        let mut seen = result.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn k_larger_than_q_is_an_error() {
        let points = DMatrix::from_element(3, 2, 0.0);
        assert!(matches!(
            kmeans(&points, 4, 0),
            Err(ClusterError::TooManyClusters { k: 4, q: 3 })
        ));
    }

    #[test]
    fn wcss_is_monotone_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = blob(&[0.0, 0.0, 0.0], 2.0, 50, &mut rng);
        rows.extend(blob(&[5.0, 1.0, -2.0], 2.0, 50, &mut rng));
        rows.extend(blob(&[-4.0, 6.0, 3.0], 2.0, 50, &mut rng));
        let points = to_matrix(&rows);
        for seed in 0..20 {
            let result = kmeans(&points, 4, seed).unwrap();
            for pair in result.wcss_history.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9 * pair[0].abs(),
                    "wcss increased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn converged_centroids_are_member_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = blob(&[0.0, 0.0], 1.0, 30, &mut rng);
        rows.extend(blob(&[10.0, -3.0], 1.0, 25, &mut rng));
        let points = to_matrix(&rows);
        let result = kmeans(&points, 2, 1).unwrap();
        for c in 0..2 {
            let members: Vec<usize> = (0..points.nrows())
                .filter(|&i| result.assignment[i] == c)
                .collect();
            for j in 0..points.ncols() {
                let mean: f64 =
                    members.iter().map(|&i| points[(i, j)]).sum::<f64>() / members.len() as f64;
                assert!((result.centroids[(c, j)] - mean).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lloyd_is_invariant_under_point_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rows = blob(&[0.0, 0.0], 1.5, 20, &mut rng);
        rows.extend(blob(&[8.0, 8.0], 1.5, 20, &mut rng));
        let points = to_matrix(&rows);
        let init = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 7.0, 7.0]);
        let base = kmeans_with_init(&points, &init);

        // Reverse the point order; same initial centroids.
        let q = rows.len();
        let reversed: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let permuted = to_matrix(&reversed);
        let result = kmeans_with_init(&permuted, &init);
        for i in 0..q {
            assert_eq!(result.assignment[q - 1 - i], base.assignment[i]);
        }
        assert!((result.wcss - base.wcss).abs() <= 1e-9 * base.wcss.max(1e-300));
    }

    #[test]
    fn silhouette_far_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = blob(&[0.0, 0.0], 1.0, 30, &mut rng);
        rows.extend(blob(&[100.0, 0.0], 1.0, 30, &mut rng));
        let points = to_matrix(&rows);
        let labels: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
        let score = silhouette_score(&points, &labels).unwrap();
        assert!(score > 0.95, "score {score}");

        // Shuffled labels destroy the structure.
        let shuffled: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let bad = silhouette_score(&points, &shuffled).unwrap();
        assert!(bad < 0.1, "shuffled score {bad}");
    }

    #[test]
    fn silhouette_single_cluster_undefined() {
        let points = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(
            silhouette_score(&points, &[0, 0, 0, 0]),
            Err(ClusterError::UndefinedSilhouette)
        ));
    }

    fn observation(f: f64, sigma: f64, shape: &[(f64, f64)], index: usize) -> ModeObservation {
        ModeObservation {
            frequency_hz: f,
            decay_rate: sigma,
            phasors: shape
                .iter()
                .map(|&(re, im)| Complex64::new(re, im))
                .collect(),
            window_index: index,
            window_t_start: index as f64,
            cpc_index: 0,
            regression_mse: 1e-4,
        }
    }

    fn jittered_set(seed: u64) -> ObservationSet {
        // Three ground-truth modes with distinct shapes, Gaussian jitter.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let truths = [
            (0.3, -0.25, [(1.0, 0.0), (0.6, 0.2), (0.5, -0.3), (0.4, 0.0)]),
            (0.5, -0.30, [(-0.4, 0.0), (-0.4, 0.05), (0.7, 0.0), (1.0, 0.0)]),
            (0.7, -0.35, [(1.0, 0.0), (-0.9, 0.1), (0.1, 0.0), (-0.1, 0.05)]),
        ];
        let mut observations = Vec::new();
        for (m, (f, sigma, shape)) in truths.iter().enumerate() {
            for i in 0..30 {
                let jitter: Vec<(f64, f64)> = shape
                    .iter()
                    .map(|&(re, im)| (re + normal.sample(&mut rng), im + normal.sample(&mut rng)))
                    .collect();
                observations.push(observation(
                    f + normal.sample(&mut rng),
                    sigma + normal.sample(&mut rng),
                    &jitter,
                    m * 30 + i,
                ));
            }
        }
        ObservationSet {
            channel_ids: (0..4).map(|i| format!("g{}", i + 1)).collect(),
            observations,
        }
    }

    #[test]
    fn three_mode_set_selects_three_clusters() {
        let set = jittered_set(40);
        let output = select_and_cluster(&set, &ClusterConfig::default()).unwrap();
        assert_eq!(output.selected_k, 3, "silhouette {:?}", output.mean_silhouette);
        assert!(!output.low_confidence);
        let mut freqs: Vec<f64> = output.estimates.iter().map(|e| e.frequency_hz).collect();
        freqs.sort_by(f64::total_cmp);
        for (got, want) in freqs.iter().zip(&[0.3, 0.5, 0.7]) {
            assert!((got - want).abs() <= 0.05, "{got} vs {want}");
        }
        // Cross-check membership: every member is closest to its centroid.
        let matrix = ObservationMatrix::from_observations(&set.observations).unwrap();
        for (e_index, estimate) in output.estimates.iter().enumerate() {
            assert_eq!(estimate.member_count, estimate.member_indices.len());
            for &i in &estimate.member_indices {
                assert_eq!(output.assignment[i], e_index);
            }
            // Centroid equals member mean in physical units.
            for (j, name) in [(0usize, "f"), (1usize, "sigma")] {
                let mean: f64 = estimate
                    .member_indices
                    .iter()
                    .map(|&i| matrix.points[(i, j)])
                    .sum::<f64>()
                    / estimate.member_count as f64;
                let got = if j == 0 {
                    estimate.frequency_hz
                } else {
                    estimate.decay_rate
                };
                assert!((got - mean).abs() < 1e-10, "{name} centroid mismatch");
            }
        }
    }

    #[test]
    fn tight_duplicate_cluster_falls_back_to_one() {
        // All observations effectively identical: no silhouette support for
        // any k >= 2, so the documented fallback reports one low-confidence
        // cluster.
        let shape = [(1.0, 0.0), (0.5, 0.1)];
        let observations: Vec<ModeObservation> = (0..20)
            .map(|i| observation(0.5, -0.3, &shape, i))
            .collect();
        let set = ObservationSet {
            channel_ids: vec!["a".into(), "b".into()],
            observations,
        };
        let output = select_and_cluster(&set, &ClusterConfig::default()).unwrap();
        assert_eq!(output.selected_k, 1);
        assert!(output.low_confidence);
        assert_eq!(output.estimates.len(), 1);
        assert_eq!(output.estimates[0].member_count, 20);
    }

    #[test]
    fn single_observation_becomes_single_estimate() {
        let set = ObservationSet {
            channel_ids: vec!["a".into(), "b".into()],
            observations: vec![observation(0.4, -0.2, &[(1.0, 0.0), (0.0, 0.5)], 0)],
        };
        let output = select_and_cluster(&set, &ClusterConfig::default()).unwrap();
        assert_eq!(output.estimates.len(), 1);
        assert_eq!(output.estimates[0].frequency_hz, 0.4);
        assert_eq!(output.estimates[0].member_count, 1);
    }

    #[test]
    fn empty_set_is_an_error() {
        let set = ObservationSet {
            channel_ids: vec![],
            observations: vec![],
        };
        assert!(matches!(
            select_and_cluster(&set, &ClusterConfig::default()),
            Err(ClusterError::NoObservations)
        ));
    }

    fn estimate(f: f64, shape: &[(f64, f64)], members: usize, base: usize) -> ModeEstimate {
        ModeEstimate {
            frequency_hz: f,
            decay_rate: -0.3,
            shape: shape.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
            member_count: members,
            member_indices: (base..base + members).collect(),
            dispersion: vec![0.01; 2 + 2 * shape.len()],
        }
    }

    #[test]
    fn rotated_replicate_is_merged() {
        let a = estimate(0.5, &[(1.0, 0.0), (-0.8, 0.0), (0.6, 0.1)], 30, 0);
        // The same shape rotated by 180 degrees.
        let b = estimate(0.51, &[(-1.0, 0.0), (0.8, 0.0), (-0.6, -0.1)], 10, 30);
        let merged = merge_replicates(&[a.clone(), b], 15.0, 0.05);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].member_count, 40);
        assert_eq!(merged[0].member_indices.len(), 40);
        // Merged shape stays aligned with the anchor.
        for (g, want) in merged[0].shape.iter().zip(&a.shape) {
            assert!((g - want).norm() < 0.05, "{g} vs {want}");
        }
    }

    #[test]
    fn distinct_modes_stay_separate() {
        let a = estimate(0.5, &[(1.0, 0.0), (-0.8, 0.0)], 30, 0);
        let b = estimate(0.7, &[(1.0, 0.0), (-0.8, 0.0)], 20, 30);
        let merged = merge_replicates(&[a, b], 15.0, 0.05);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn different_shapes_at_same_frequency_stay_separate() {
        let a = estimate(0.5, &[(1.0, 0.0), (0.0, 1.0)], 30, 0);
        let b = estimate(0.5, &[(1.0, 0.0), (0.9, 0.0)], 20, 30);
        let merged = merge_replicates(&[a, b], 15.0, 0.05);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn merge_of_empty_list_is_empty() {
        assert!(merge_replicates(&[], 15.0, 0.05).is_empty());
    }

    #[test]
    fn merge_is_idempotent() {
        let estimates = vec![
            estimate(0.5, &[(1.0, 0.0), (-0.8, 0.0)], 30, 0),
            estimate(0.51, &[(-1.0, 0.0), (0.8, 0.0)], 10, 30),
            estimate(0.7, &[(0.3, 0.2), (1.0, 0.0)], 25, 40),
        ];
        let once = merge_replicates(&estimates, 15.0, 0.05);
        let twice = merge_replicates(&once, 15.0, 0.05);
        assert_eq!(once, twice);
    }

    #[test]
    fn silhouette_selects_true_k_repeatedly() {
        // 3 well-separated blobs; the selection must find k = 3 in at least
        // 95 of 100 seeded trials.
        let mut hits = 0;
        for seed in 0..100 {
            let set = jittered_set(seed);
            let cfg = ClusterConfig {
                seed,
                ..ClusterConfig::default()
            };
            let output = select_and_cluster(&set, &cfg).unwrap();
            if output.selected_k == 3 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "true k found in only {hits}/100 trials");
    }

    #[test]
    fn estimates_report_serializes() {
        let set = jittered_set(1);
        let output = select_and_cluster(&set, &ClusterConfig::default()).unwrap();
        let report = EstimatesReport::new(&output, &set);
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: EstimatesReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.estimates.len(), output.estimates.len());
        let first = &report.estimates[0];
        assert_eq!(first.shape.len(), 4);
        assert_eq!(first.plot.member_histograms.len(), 10);
    }
}
