//! Empirical mode decomposition by sifting, used here mainly to compute the
//! non-oscillatory residual that detrends principal-component scores.
//!
//! Envelopes are natural cubic splines through the local maxima/minima, with
//! the first and last two extrema mirrored past the series ends to anchor
//! the spline. Sifting stops on a Cauchy-type criterion
//! `SD = sum((h_prev - h)^2) / sum(h_prev^2) < sd_threshold` or after
//! `max_sift_iterations`; the decomposition stops once the residual has
//! fewer than 3 interior extrema. Sifting an IMF requires at least two
//! maxima and two minima, so inputs without them come back untouched as
//! their own residual.

use super::SigprocError;

/// Sifting parameters. The defaults are conventional choices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmdConfig {
    /// Cauchy-type stopping threshold for the sifting loop.
    pub sd_threshold: f64,
    /// Hard cap on sifting iterations per IMF.
    pub max_sift_iterations: usize,
    /// Hard cap on the number of extracted IMFs.
    pub max_imfs: usize,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            sd_threshold: 0.2,
            max_sift_iterations: 50,
            max_imfs: 16,
        }
    }
}

/// Decomposition output: oscillatory IMFs (fastest first) plus the
/// non-oscillatory residual. The IMFs and residual sum back to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmdResult {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    /// Sifting iterations spent on each IMF.
    pub n_sift_iterations: Vec<usize>,
}

/// Decomposes `x` into IMFs and a residual.
pub fn emd(x: &[f64], cfg: &EmdConfig) -> Result<EmdResult, SigprocError> {
    if x.len() < 4 {
        return Err(SigprocError::TooShort {
            got: x.len(),
            min: 4,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SigprocError::NonFiniteInput);
    }

    let mut residual = x.to_vec();
    let mut imfs: Vec<Vec<f64>> = Vec::new();
    let mut n_sift_iterations = Vec::new();

    while imfs.len() < cfg.max_imfs {
        let (maxima, minima) = local_extrema(&residual);
        if maxima.len() + minima.len() < 3 || maxima.len() < 2 || minima.len() < 2 {
            break;
        }

        let mut h = residual.clone();
        let mut iterations = 0;
        loop {
            let (hmax, hmin) = local_extrema(&h);
            if hmax.len() < 2 || hmin.len() < 2 {
                break;
            }
            let upper = spline_envelope(&h, &hmax);
            let lower = spline_envelope(&h, &hmin);
            let denom: f64 = h.iter().map(|v| v * v).sum();
            if denom == 0.0 {
                break;
            }
            let mut sd_num = 0.0;
            for k in 0..h.len() {
                let m = 0.5 * (upper[k] + lower[k]);
                sd_num += m * m;
                h[k] -= m;
            }
            iterations += 1;
            if sd_num / denom < cfg.sd_threshold || iterations >= cfg.max_sift_iterations {
                break;
            }
        }
        if iterations == 0 {
            break;
        }
        for (r, v) in residual.iter_mut().zip(&h) {
            *r -= v;
        }
        imfs.push(h);
        n_sift_iterations.push(iterations);
    }

    Ok(EmdResult {
        imfs,
        residual,
        n_sift_iterations,
    })
}

/// Subtracts the EMD residual, leaving only the oscillatory content.
pub fn detrend_by_emd(x: &[f64], cfg: &EmdConfig) -> Result<Vec<f64>, SigprocError> {
    let result = emd(x, cfg)?;
    Ok(x.iter()
        .zip(&result.residual)
        .map(|(v, r)| v - r)
        .collect())
}

/// Interior local maxima and minima. Runs of equal values collapse to their
/// middle sample, so plateaus register as single extrema.
fn local_extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = x.len();
    let mut reps: Vec<(usize, f64)> = Vec::new();
    let mut run_start = 0;
    for k in 1..=n {
        if k == n || x[k] != x[run_start] {
            reps.push((run_start + (k - 1 - run_start) / 2, x[run_start]));
            run_start = k;
        }
    }
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 1..reps.len().saturating_sub(1) {
        let prev = reps[i - 1].1;
        let (idx, v) = reps[i];
        let next = reps[i + 1].1;
        if v > prev && v > next {
            maxima.push(idx);
        } else if v < prev && v < next {
            minima.push(idx);
        }
    }
    (maxima, minima)
}

/// Natural cubic spline through the given extrema, with up to two extrema
/// mirrored about each end so the spline is defined over the whole series.
fn spline_envelope(x: &[f64], extrema: &[usize]) -> Vec<f64> {
    let n = x.len();
    let last = (n - 1) as f64;
    let take = extrema.len().min(2);

    let mut xs: Vec<f64> = Vec::with_capacity(extrema.len() + 2 * take);
    let mut ys: Vec<f64> = Vec::with_capacity(xs.capacity());
    for &e in extrema.iter().take(take).rev() {
        xs.push(-(e as f64));
        ys.push(x[e]);
    }
    for &e in extrema {
        xs.push(e as f64);
        ys.push(x[e]);
    }
    for &e in extrema.iter().rev().take(take) {
        xs.push(2.0 * last - e as f64);
        ys.push(x[e]);
    }

    let second = natural_spline_second_derivatives(&xs, &ys);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = k as f64;
        while seg + 2 < xs.len() && xs[seg + 1] < t {
            seg += 1;
        }
        out.push(eval_spline_segment(&xs, &ys, &second, seg, t));
    }
    out
}

/// Second derivatives of a natural cubic spline (Thomas solve).
fn natural_spline_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let k = xs.len();
    let mut m = vec![0.0; k];
    if k < 3 {
        return m;
    }
    // Tridiagonal system for interior second derivatives.
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut upper = vec![0.0; k];
    for i in 1..k - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    // Forward elimination; the sub-diagonal entry at row i is h0 = xs[i]-xs[i-1].
    for i in 2..k - 1 {
        let h0 = xs[i] - xs[i - 1];
        let w = h0 / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (1..k - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

fn eval_spline_segment(xs: &[f64], ys: &[f64], m: &[f64], seg: usize, t: f64) -> f64 {
    let h = xs[seg + 1] - xs[seg];
    let a = (xs[seg + 1] - t) / h;
    let b = (t - xs[seg]) / h;
    a * ys[seg]
        + b * ys[seg + 1]
        + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
}
