//! Real PCA, complex PCA and their two-layer combination.
//!
//! The first layer diagonalizes the real covariance `X X^T / (N-1)` and
//! projects onto the leading eigenvectors. Each retained score row is then
//! detrended (EMD residual subtracted), turned into an analytic signal,
//! tapered, and fed to the complex layer, which diagonalizes the Hermitian
//! covariance `Y Y* / (N'-1)`. The product `W = U V` maps complex scores
//! straight back to the measurement channels, so the columns of `W` read as
//! observability mode-shape estimates.
//!
//! Determinism: eigenvalues sort descending; every real eigenvector is
//! flipped so its largest-magnitude entry is positive, and every complex
//! eigenvector is rotated so its largest-magnitude entry is real-positive.

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex;
use thiserror::Error;

use crate::sigproc::{self, EmdConfig, SigprocError};

type Complex64 = Complex<f64>;

/// Relative eigenvalue floor below which components count as numerically
/// zero-variance and are never retained.
const RANK_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input matrix contains non-finite values")]
    NonFiniteInput,
    #[error("component selection kept no components")]
    NoComponentsKept,
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
}

/// How many components to keep after an eigendecomposition.
///
/// Zero-variance components (relative eigenvalue below `1e-12`) are never
/// kept, whichever variant is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSelection {
    /// Keep exactly this many components (capped at the available count).
    Count(usize),
    /// Keep the smallest leading set whose variance fractions sum to at
    /// least this threshold.
    CumulativeVariance(f64),
}

impl Default for ComponentSelection {
    fn default() -> Self {
        ComponentSelection::CumulativeVariance(0.95)
    }
}

impl ComponentSelection {
    /// Number of leading components to keep for the given descending
    /// eigenvalue spectrum.
    fn resolve(&self, eigenvalues: &[f64]) -> usize {
        let total: f64 = eigenvalues.iter().sum();
        if total <= 0.0 {
            return 0;
        }
        let floor = eigenvalues[0] * RANK_EPS;
        let rank = eigenvalues.iter().take_while(|&&v| v > floor).count();
        match *self {
            ComponentSelection::Count(k) => k.min(rank),
            ComponentSelection::CumulativeVariance(threshold) => {
                let mut cumulative = 0.0;
                for (i, &v) in eigenvalues.iter().take(rank).enumerate() {
                    cumulative += v / total;
                    if cumulative >= threshold {
                        return i + 1;
                    }
                }
                rank
            }
        }
    }
}

/// Output of the real layer.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `M x M_PC`; columns are eigenvectors in descending eigenvalue order.
    pub components: DMatrix<f64>,
    /// `M_PC x N` score series, `S = U^T X`.
    pub scores: DMatrix<f64>,
    /// Full descending spectrum (length `M`), clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues normalized by the total variance (length `M`).
    pub variance_fractions: Vec<f64>,
}

/// Output of the complex layer.
#[derive(Debug, Clone)]
pub struct CpcaResult {
    /// `M_PC x M_CPC` unitary-column matrix of complex eigenvectors.
    pub components: DMatrix<Complex64>,
    /// `M_CPC x N'` complex scores, `Z = V* Y`.
    pub scores: DMatrix<Complex64>,
    /// Full descending spectrum (real, clamped at zero).
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues normalized by the total variance.
    pub variance_fractions: Vec<f64>,
}

/// Output of the two-layer combination.
#[derive(Debug, Clone)]
pub struct TwoLayerResult {
    /// `M x M_CPC` coefficient matrix `W = U V`; column `j` holds the
    /// per-channel complex coefficients of complex component `j`.
    pub w: DMatrix<Complex64>,
    /// `M_CPC x N'` complex scores of the second layer.
    pub z: DMatrix<Complex64>,
    /// `M_PC x N` EMD residual per retained first-layer score row.
    pub residuals: DMatrix<f64>,
    pub pca: PcaResult,
    pub cpca: CpcaResult,
}

/// Tuning for [`two_layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerConfig {
    pub keep_pcs: ComponentSelection,
    pub keep_cpcs: ComponentSelection,
    /// Fraction of samples removed at each end after the Hilbert transform.
    pub taper_fraction: f64,
    pub emd: EmdConfig,
}

impl Default for TwoLayerConfig {
    fn default() -> Self {
        Self {
            keep_pcs: ComponentSelection::default(),
            keep_cpcs: ComponentSelection::default(),
            taper_fraction: sigproc::DEFAULT_TAPER_FRACTION,
            emd: EmdConfig::default(),
        }
    }
}

/// Principal component analysis of zero-mean rows.
///
/// The caller removes row means first; this is asserted to within
/// `1e-9 * max|row|` per row.
pub fn pca(x: DMatrixView<f64>, keep: ComponentSelection) -> Result<PcaResult, DecompError> {
    let (m, n) = x.shape();
    if n < 2 {
        return Err(DecompError::TooFewSamples(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DecompError::NonFiniteInput);
    }
    for i in 0..m {
        let row = x.row(i);
        let mean = row.sum() / n as f64;
        let amax = row.amax();
        assert!(
            mean.abs() <= 1e-9 * amax.max(f64::MIN_POSITIVE),
            "pca caller must remove row means first (row {i} has mean {mean:e})"
        );
    }

    let mut covariance = x * x.transpose() / (n as f64 - 1.0);
    // Symmetrize away accumulation asymmetry before the eigensolve.
    covariance = (&covariance + covariance.transpose()) * 0.5;
    let eigen = covariance.symmetric_eigen();

    let order = descending_order(eigen.eigenvalues.as_slice());
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eigen.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = eigenvalues.iter().sum();
    let variance_fractions: Vec<f64> = eigenvalues
        .iter()
        .map(|&v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let kept = keep.resolve(&eigenvalues);
    if kept == 0 {
        return Err(DecompError::NoComponentsKept);
    }
    let mut components = DMatrix::zeros(m, kept);
    for (col, &src) in order.iter().take(kept).enumerate() {
        let mut v: Vec<f64> = eigen.eigenvectors.column(src).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        components.column_mut(col).copy_from_slice(&v);
    }
    let scores = components.transpose() * x;

    Ok(PcaResult {
        components,
        scores,
        eigenvalues,
        variance_fractions,
    })
}

/// Complex principal component analysis via the Hermitian covariance
/// `Y Y* / (N'-1)`. Rows are expected to be (near) zero-mean; the theory
/// assumes it, but no hard check is made because the tapered analytic rows
/// produced by the pipeline are only zero-mean to leading order.
pub fn cpca(
    y: DMatrixView<Complex64>,
    keep: ComponentSelection,
) -> Result<CpcaResult, DecompError> {
    let (m, n) = y.shape();
    if n < 2 {
        return Err(DecompError::TooFewSamples(n));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(DecompError::NonFiniteInput);
    }

    let mut covariance = y * y.adjoint() / Complex64::new(n as f64 - 1.0, 0.0);
    covariance = (&covariance + covariance.adjoint()) * Complex64::new(0.5, 0.0);
    let eigen = covariance.symmetric_eigen();

    let order = descending_order(eigen.eigenvalues.as_slice());
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eigen.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = eigenvalues.iter().sum();
    let variance_fractions: Vec<f64> = eigenvalues
        .iter()
        .map(|&v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let kept = keep.resolve(&eigenvalues);
    if kept == 0 {
        return Err(DecompError::NoComponentsKept);
    }
    let mut components = DMatrix::zeros(m, kept);
    for (col, &src) in order.iter().take(kept).enumerate() {
        let mut v: Vec<Complex64> = eigen.eigenvectors.column(src).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let magnitude = v[pivot].norm();
        if magnitude > 0.0 {
            let rotation = v[pivot].conj() / magnitude;
            v.iter_mut().for_each(|e| *e *= rotation);
        }
        components.column_mut(col).copy_from_slice(&v);
    }
    let scores = components.adjoint() * y;

    Ok(CpcaResult {
        components,
        scores,
        eigenvalues,
        variance_fractions,
    })
}

/// Runs the two-layer decomposition on a zero-mean-row window matrix.
pub fn two_layer(
    x: DMatrixView<f64>,
    cfg: &TwoLayerConfig,
) -> Result<TwoLayerResult, DecompError> {
    let pca_result = pca(x, cfg.keep_pcs)?;
    let (m_pc, n) = pca_result.scores.shape();

    let mut residuals = DMatrix::zeros(m_pc, n);
    let mut analytic_rows: Vec<Vec<Complex64>> = Vec::with_capacity(m_pc);
    for i in 0..m_pc {
        let score: Vec<f64> = pca_result.scores.row(i).iter().copied().collect();
        let emd_result = sigproc::emd(&score, &cfg.emd)?;
        let detrended: Vec<f64> = score
            .iter()
            .zip(&emd_result.residual)
            .map(|(s, r)| s - r)
            .collect();
        residuals
            .row_mut(i)
            .copy_from_slice(&emd_result.residual);
        let analytic = sigproc::analytic_signal(&detrended)?;
        analytic_rows.push(sigproc::taper_ends(&analytic, cfg.taper_fraction)?);
    }

    let n_tapered = analytic_rows[0].len();
    let y = DMatrix::from_fn(m_pc, n_tapered, |i, j| analytic_rows[i][j]);
    let cpca_result = cpca(y.as_view(), cfg.keep_cpcs)?;

    let u_complex = pca_result.components.map(|v| Complex64::new(v, 0.0));
    let w = &u_complex * &cpca_result.components;
    let z = cpca_result.scores.clone();

    Ok(TwoLayerResult {
        w,
        z,
        residuals,
        pca: pca_result,
        cpca: cpca_result,
    })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}
