//! Scalar-series signal processing used by the decomposition pipeline:
//! mean removal, EMD detrending, analytic-signal construction, end
//! tapering, mean-frequency estimation and exponential fitting.
//!
//! All functions here are pure; they can run concurrently on shared
//! read-only data.

mod emd;

pub use emd::{detrend_by_emd, emd, EmdConfig, EmdResult};

use num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

type Complex64 = Complex<f64>;

/// Default fraction of samples removed at each end after the Hilbert
/// transform, guarding against its end effects.
pub const DEFAULT_TAPER_FRACTION: f64 = 0.10;

/// Default relative power threshold bounding the spectral band used by
/// [`mean_frequency`]; see that function for the rationale.
pub const DEFAULT_PEAK_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SigprocError {
    #[error("empty input series")]
    EmptyInput,
    #[error("series of {got} samples is below the minimum of {min}")]
    TooShort { got: usize, min: usize },
    #[error("input series contains non-finite values")]
    NonFiniteInput,
    #[error("taper fraction {0} outside [0, 0.5)")]
    InvalidTaperFraction(f64),
    #[error("tapering left {remaining} samples, fewer than the minimum of 4")]
    WindowTooShortAfterTaper { remaining: usize },
    #[error("series has zero spectral power")]
    ZeroPower,
    #[error("amplitude at index {index} is not positive; cannot fit an exponential")]
    NonPositiveAmplitude { index: usize },
    #[error("regression is singular: all abscissae are equal")]
    SingularRegression,
    #[error("input series lengths differ: {xs} vs {ys}")]
    MismatchedLengths { xs: usize, ys: usize },
}

/// Subtracts the arithmetic mean so the output has zero mean.
pub fn remove_mean(x: &[f64]) -> Result<Vec<f64>, SigprocError> {
    if x.is_empty() {
        return Err(SigprocError::EmptyInput);
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(x.iter().map(|v| v - mean).collect())
}

/// Builds the analytic signal `x + j*H(x)` of a zero-mean series.
///
/// Frequency-domain construction: negative-frequency bins are zeroed,
/// positive bins doubled, DC and Nyquist kept unscaled. The real part of the
/// output is the input itself, bit for bit; only the imaginary part comes
/// from the transform.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>, SigprocError> {
    let n = x.len();
    if n < 4 {
        return Err(SigprocError::TooShort { got: n, min: 4 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SigprocError::NonFiniteInput);
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for bin in buf.iter_mut().take(half).skip(1) {
        *bin *= 2.0;
    }
    // For odd n there is no Nyquist bin; n/2 rounds down into the positive side.
    if n % 2 == 1 {
        buf[half] *= 2.0;
    }
    for bin in buf.iter_mut().skip(half + 1) {
        *bin = Complex64::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf
        .iter()
        .zip(x)
        .map(|(c, &re)| Complex64::new(re, c.im * scale))
        .collect())
}

/// Number of samples removed at each end for a given taper fraction.
pub fn taper_len(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).ceil() as usize
}

/// Removes `ceil(fraction * N)` samples from each end of the series.
///
/// Tapering is truncation rather than windowing: Hilbert end effects are
/// confined to the ends, and truncation keeps the covariance of the
/// remaining samples unweighted.
pub fn taper_ends(y: &[Complex64], fraction: f64) -> Result<Vec<Complex64>, SigprocError> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(SigprocError::InvalidTaperFraction(fraction));
    }
    let cut = taper_len(y.len(), fraction);
    let remaining = y.len().saturating_sub(2 * cut);
    if remaining < 4 {
        return Err(SigprocError::WindowTooShortAfterTaper { remaining });
    }
    Ok(y[cut..y.len() - cut].to_vec())
}

/// Power-weighted mean frequency of a complex series, in Hz.
///
/// The one-sided periodogram over `[0, fs/2]` is reduced to the contiguous
/// band around its dominant peak where the power stays at or above
/// `peak_fraction` times the peak power, and the weighted mean
/// `sum(f_k P_k) / sum(P_k)` is taken over that band. With
/// `peak_fraction = 0` the band spans all of `[0, fs/2]`.
///
/// The banding matters for damped oscillations: their spectra carry slowly
/// decaying tails whose full-band centroid sits well above the oscillation
/// frequency (about +0.06 Hz at a decay rate of -0.3 1/s, growing with
/// damping), while the peak-banded mean stays on the peak.
pub fn mean_frequency(
    z: &[Complex64],
    sample_rate_hz: f64,
    peak_fraction: f64,
) -> Result<f64, SigprocError> {
    let n = z.len();
    if n < 4 {
        return Err(SigprocError::TooShort { got: n, min: 4 });
    }
    let mut buf = z.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let (k_peak, &p_peak) = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    if p_peak <= 0.0 {
        return Err(SigprocError::ZeroPower);
    }
    let threshold = peak_fraction.clamp(0.0, 1.0) * p_peak;
    let mut lo = k_peak;
    while lo > 0 && power[lo - 1] >= threshold {
        lo -= 1;
    }
    let mut hi = k_peak;
    while hi < half && power[hi + 1] >= threshold {
        hi += 1;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &p) in power.iter().enumerate().take(hi + 1).skip(lo) {
        num += k as f64 * sample_rate_hz / n as f64 * p;
        den += p;
    }
    Ok(num / den)
}

/// Exponential fit `y = alpha * exp(beta * x)` together with the mean
/// squared error of the fit recomputed in the original domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    /// Amplitude at `x = 0`.
    pub alpha: f64,
    /// Decay rate in 1/s; negative means decaying.
    pub beta: f64,
    /// `(1/N) * sum((alpha * exp(beta x_i) - y_i)^2)`.
    pub mse: f64,
}

/// Fits `alpha * exp(beta * x)` to strictly positive data by ordinary least
/// squares of `ln(y)` on `x`. Growing fits (`beta > 0`) are allowed.
pub fn fit_exponential(xs: &[f64], ys: &[f64]) -> Result<ExpFit, SigprocError> {
    if xs.len() != ys.len() {
        return Err(SigprocError::MismatchedLengths {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(SigprocError::TooShort { got: n, min: 2 });
    }
    for (index, &y) in ys.iter().enumerate() {
        if y <= 0.0 || !y.is_finite() {
            return Err(SigprocError::NonPositiveAmplitude { index });
        }
    }
    let x_mean = xs.iter().sum::<f64>() / n as f64;
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let log_mean = logs.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, l) in xs.iter().zip(&logs) {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (l - log_mean);
    }
    if sxx == 0.0 {
        return Err(SigprocError::SingularRegression);
    }
    let beta = sxy / sxx;
    let alpha = (log_mean - beta * x_mean).exp();
    let mse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = alpha * (beta * x).exp() - y;
            r * r
        })
        .sum::<f64>()
        / n as f64;
    Ok(ExpFit { alpha, beta, mse })
}
