//! Fourier-domain (Whittle) likelihood of log-leaders on irregular regions.
//!
//! At scale `j` the centred log-leaders of one region are modelled as a
//! stationary Gaussian field with radial covariance
//!
//! ```text
//! C(r) = theta1 * g_log(r)   + theta2 * g_short(r)
//! g_log(r)   = max{0, ln((r_j + 1) / (r + 1))},  r_j = floor(N_j / 4)
//! g_short(r) = max{0, 1 - ln(r + 1) / ln 4}      (support r < 3)
//! ```
//!
//! `theta1` (the negated multifractality log-cumulant, `-c2`) scales the
//! slow logarithmic decay; `theta2` scales the short-range part induced by
//! the overlapping leader neighbourhoods. The likelihood is evaluated on
//! the DFT coefficients of the region restricted to low frequencies
//! `0 < ||m||_inf <= floor(N_j/4)`. Irregular regions are handled with the
//! debiased masked periodogram: coefficients are computed from the masked,
//! re-centred field, and the model spectrum is the DFT of the covariance
//! multiplied by the mask autocorrelation (so a full mask reduces exactly
//! to the plain periodogram model).

use crate::error::{MfError, Result};
use crate::fft::Fft2;
use crate::grid::Grid;
use num_complex::Complex;

/// Clamp floor for masked spectral weights.
pub const EPS_SPECTRAL: f64 = 1e-8;

/// Region parameters of the covariance model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassParams {
    /// Amplitude of the logarithmic covariance decay; equals `-c2`.
    pub theta1: f64,
    /// Amplitude of the short-range component (variance offset).
    pub theta2: f64,
}

/// Logarithmic covariance kernel, truncated at `r_j`.
#[inline]
pub fn g_log(rj: usize, r: f64) -> f64 {
    (((rj as f64 + 1.0) / (r + 1.0)).ln()).max(0.0)
}

/// Short-range covariance kernel: 1 at r=0, 0 from r=3 on.
#[inline]
pub fn g_short(r: f64) -> f64 {
    (1.0 - (r + 1.0).ln() / 4f64.ln()).max(0.0)
}

/// Model covariance at radial lag `r` for truncation radius `r_j`.
#[inline]
pub fn cov_model(p: ClassParams, rj: usize, r: f64) -> f64 {
    p.theta1 * g_log(rj, r) + p.theta2 * g_short(r)
}

/// Truncation radius of the log-range kernel on a scale-`j` grid of side
/// `nj`: a quarter of the side, the largest lag at which the asymptotic
/// covariance is trusted.
#[inline]
pub fn trunc_radius(nj: usize) -> usize {
    nj / 4
}

/// Per-scale marginal variance law used by the label data term.
///
/// `CovLagZero` (default) evaluates the class covariance model at lag zero,
/// `theta1 * ln(r_j + 1) + theta2` — the variance the spectral likelihood
/// itself assigns a site at scale `j`, so data term and likelihood agree.
/// The `LogScale` variants use the cumulant form `theta2 ± theta1 * j ln 2`
/// instead; they are kept as sensitivity checks (on finite grids their
/// scale direction disagrees with the covariance model's).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VarianceLaw {
    #[default]
    CovLagZero,
    LogScale,
    LogScaleNegated,
}

#[inline]
pub fn marginal_leader_var(p: ClassParams, j: u32, rj: usize, law: VarianceLaw) -> f64 {
    let t = p.theta1 * (j as f64) * std::f64::consts::LN_2;
    let v = match law {
        VarianceLaw::CovLagZero => p.theta1 * ((rj as f64) + 1.0).ln() + p.theta2,
        VarianceLaw::LogScale => p.theta2 + t,
        VarianceLaw::LogScaleNegated => p.theta2 - t,
    };
    v.max(1e-10)
}

/// Log-density of `N(0, var)` at `x`.
#[inline]
pub fn normal_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((std::f64::consts::TAU * var).ln() + x * x / var)
}

/// Default divisor for the retained-frequency window: on a scale-`j` grid
/// of side `nj`, keep `0 < ||m||_inf <= nj / FREQ_DIVISOR_DEFAULT`. A window
/// tighter than the covariance truncation radius (`nj/4`) stays clear of the
/// high frequencies where the leader sup flattens the spectrum.
pub const FREQ_DIVISOR_DEFAULT: usize = 5;

/// Retained low-frequency set of one scale: integer frequencies
/// `m = (m1, m2)` with `0 < ||m||_inf <= radius`, mapped to row-major
/// FFT bins of the `nj x nj` grid. Enumeration order is fixed
/// (lexicographic in `m1, m2`) and shared by every per-frequency vector.
#[derive(Clone, Debug)]
pub struct FreqSet {
    pub nj: usize,
    pub radius: usize,
    pub bins: Vec<u32>,
}

impl FreqSet {
    pub fn new(nj: usize) -> Result<Self> {
        Self::with_divisor(nj, FREQ_DIVISOR_DEFAULT)
    }

    /// Window of radius `nj / divisor`, capped to the unique-bin range.
    pub fn with_divisor(nj: usize, divisor: usize) -> Result<Self> {
        if nj < 8 || !nj.is_power_of_two() {
            return Err(MfError::ScaleRange(format!(
                "scale grid side {nj} too small for the spectral model (need >= 8)"
            )));
        }
        if divisor == 0 {
            return Err(MfError::Config(
                "frequency window divisor must be positive".into(),
            ));
        }
        let radius = (nj / divisor).clamp(1, nj / 2 - 1);
        let mut bins = Vec::with_capacity((2 * radius + 1).pow(2) - 1);
        let n = nj as i64;
        for m1 in -(radius as i64)..=radius as i64 {
            for m2 in -(radius as i64)..=radius as i64 {
                if m1 == 0 && m2 == 0 {
                    continue;
                }
                let r = m1.rem_euclid(n) as u32;
                let c = m2.rem_euclid(n) as u32;
                bins.push(r * nj as u32 + c);
            }
        }
        Ok(Self { nj, radius, bins })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Torus radial distance of lag `(a, b)` on an `n x n` grid.
#[inline]
pub(crate) fn torus_radius(a: usize, b: usize, n: usize) -> f64 {
    let da = a.min(n - a) as f64;
    let db = b.min(n - b) as f64;
    da.hypot(db)
}

/// Covariance kernels as lag-domain grids (periodic radial distance), plus
/// their homogeneous spectral weights, for one scale.
#[derive(Clone, Debug)]
pub struct ScaleContext {
    pub nj: usize,
    pub rj: usize,
    pub freqs: FreqSet,
    pub g_log_grid: Grid<f64>,
    pub g_short_grid: Grid<f64>,
    /// Homogeneous spectral weights (full-grid model).
    pub g_log_spec: Vec<f64>,
    pub g_short_spec: Vec<f64>,
}

impl ScaleContext {
    pub fn new(nj: usize, fft: &mut Fft2) -> Result<Self> {
        Self::with_divisor(nj, FREQ_DIVISOR_DEFAULT, fft)
    }

    /// Context with an explicit frequency-window divisor. The covariance
    /// truncation radius is `trunc_radius(nj)` regardless of the window.
    pub fn with_divisor(nj: usize, divisor: usize, fft: &mut Fft2) -> Result<Self> {
        let freqs = FreqSet::with_divisor(nj, divisor)?;
        let rj = trunc_radius(nj);
        let g_log_grid = Grid::from_fn(nj, nj, |a, b| g_log(rj, torus_radius(a, b, nj)));
        let g_short_grid = Grid::from_fn(nj, nj, |a, b| g_short(torus_radius(a, b, nj)));
        let (g_log_spec, c1) = spectral_weights(&g_log_grid, &freqs, fft);
        let (g_short_spec, c2) = spectral_weights(&g_short_grid, &freqs, fft);
        if c1 > 0 || c2 > 0 {
            return Err(MfError::Numeric(format!(
                "homogeneous spectral weights non-positive at {} frequencies (nj = {nj})",
                c1 + c2
            )));
        }
        Ok(Self {
            nj,
            rj,
            freqs,
            g_log_grid,
            g_short_grid,
            g_log_spec,
            g_short_spec,
        })
    }
}

/// Real DFT of a lag-domain kernel evaluated on the retained frequencies,
/// clamped to [`EPS_SPECTRAL`]. Returns the weights and the clamp count.
pub fn spectral_weights(kernel: &Grid<f64>, fs: &FreqSet, fft: &mut Fft2) -> (Vec<f64>, usize) {
    let n = kernel.rows();
    debug_assert_eq!(n, fs.nj);
    let mut buf: Vec<Complex<f64>> = kernel.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut buf, n);
    let mut clamped = 0;
    let out = fs
        .bins
        .iter()
        .map(|&b| {
            let v = buf[b as usize].re;
            if v < EPS_SPECTRAL {
                clamped += 1;
                EPS_SPECTRAL
            } else {
                v
            }
        })
        .collect();
    (out, clamped)
}

/// Lag-domain debias weights of a 0/1 mask: periodic autocorrelation
/// normalized by the site count, `W(d) = (1/n_k) Σ_u T(u) T(u+d)`.
/// `W(0) = 1`; a full mask gives `W ≡ 1`.
pub fn debias_weights(mask: &Grid<u8>, fft: &mut Fft2) -> Result<Grid<f64>> {
    let n = mask.rows();
    if mask.cols() != n {
        return Err(MfError::Dim("mask must be square".into()));
    }
    let count: usize = mask.data().iter().map(|&v| v as usize).sum();
    if count == 0 {
        return Err(MfError::Degenerate("empty mask".into()));
    }
    let mut buf: Vec<Complex<f64>> = mask
        .data()
        .iter()
        .map(|&v| Complex::new(v as f64, 0.0))
        .collect();
    fft.forward(&mut buf, n);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    fft.inverse(&mut buf, n);
    let scale = 1.0 / (n * n) as f64;
    // The autocorrelation is an integer count; rounding removes FFT noise.
    let data = buf
        .iter()
        .map(|v| (v.re * scale).round().max(0.0) / count as f64)
        .collect();
    Ok(Grid::from_vec(n, n, data))
}

/// Masked, re-centred, root-count-normalized DFT coefficients of a field on
/// the retained frequencies:
/// `x_s = n_k^{-1/2} Σ_n T(n) (ℓ(n) - t̄) e^{-i ω_s·n}`, with `t̄` the
/// masked mean. Returns `(x, t̄, n_k)`.
pub fn debiased_coeffs(
    field: &Grid<f64>,
    mask: &Grid<u8>,
    fs: &FreqSet,
    fft: &mut Fft2,
) -> Result<(Vec<Complex<f64>>, f64, usize)> {
    let n = field.rows();
    if mask.rows() != n || mask.cols() != field.cols() || field.cols() != n {
        return Err(MfError::ShapeMismatch(
            "field/mask shapes differ or are not square".into(),
        ));
    }
    let count: usize = mask.data().iter().map(|&v| v as usize).sum();
    if count == 0 {
        return Err(MfError::Degenerate("empty mask".into()));
    }
    let mean = field
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m != 0)
        .map(|(v, _)| v)
        .sum::<f64>()
        / count as f64;
    let mut buf: Vec<Complex<f64>> = field
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| Complex::new(if m != 0 { v - mean } else { 0.0 }, 0.0))
        .collect();
    fft.forward(&mut buf, n);
    let norm = 1.0 / (count as f64).sqrt();
    let x = fs.bins.iter().map(|&b| buf[b as usize] * norm).collect();
    Ok((x, mean, count))
}

/// Everything the likelihood needs for one (scale, region) pair.
#[derive(Clone, Debug)]
pub struct ClassSpectrum {
    /// Debiased coefficients on the retained frequencies.
    pub x: Vec<Complex<f64>>,
    /// Masked spectral weights of the logarithmic kernel.
    pub g_log: Vec<f64>,
    /// Masked spectral weights of the short-range kernel.
    pub g_short: Vec<f64>,
    /// Masked mean that was removed.
    pub mean: f64,
    /// Site count of the region at this scale.
    pub count: usize,
    /// Spectral-weight entries raised to the clamp floor.
    pub clamped: usize,
}

/// Build the masked spectral model of one region at one scale. With a full
/// mask this reduces (exactly) to the homogeneous model: coefficients
/// `FFT(ℓ)/N_j` and weights `DFT(g)`.
pub fn class_spectrum(
    field: &Grid<f64>,
    mask: &Grid<u8>,
    ctx: &ScaleContext,
    fft: &mut Fft2,
) -> Result<ClassSpectrum> {
    let (x, mean, count) = debiased_coeffs(field, mask, &ctx.freqs, fft)?;
    let w = debias_weights(mask, fft)?;
    let wlog = Grid::from_vec(
        ctx.nj,
        ctx.nj,
        w.data()
            .iter()
            .zip(ctx.g_log_grid.data())
            .map(|(a, b)| a * b)
            .collect(),
    );
    let wshort = Grid::from_vec(
        ctx.nj,
        ctx.nj,
        w.data()
            .iter()
            .zip(ctx.g_short_grid.data())
            .map(|(a, b)| a * b)
            .collect(),
    );
    let (g_log, c1) = spectral_weights(&wlog, &ctx.freqs, fft);
    let (g_short, c2) = spectral_weights(&wshort, &ctx.freqs, fft);
    Ok(ClassSpectrum {
        x,
        g_log,
        g_short,
        mean,
        count,
        clamped: c1 + c2,
    })
}

/// Homogeneous-path coefficients (`FFT(field)/nj` on the retained set),
/// kept separate from the masked path as a cross-check target.
pub fn homogeneous_coeffs(field: &Grid<f64>, fs: &FreqSet, fft: &mut Fft2) -> Vec<Complex<f64>> {
    let n = field.rows();
    let mut buf: Vec<Complex<f64>> = field.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut buf, n);
    let norm = 1.0 / n as f64;
    fs.bins.iter().map(|&b| buf[b as usize] * norm).collect()
}

/// Log of the augmented per-region likelihood (additive constants dropped):
///
/// ```text
/// -S ln θ2 - (1/θ2) Σ_s |μ_s|²       / g_short[s]
/// -S ln θ1 - (1/θ1) Σ_s |x_s - μ_s|² / g_log[s]
/// ```
pub fn augmented_loglik(
    x: &[Complex<f64>],
    mu: &[Complex<f64>],
    p: ClassParams,
    g_log: &[f64],
    g_short: &[f64],
) -> f64 {
    let s = x.len() as f64;
    let mut q_log = 0.0;
    let mut q_short = 0.0;
    for i in 0..x.len() {
        q_log += (x[i] - mu[i]).norm_sqr() / g_log[i];
        q_short += mu[i].norm_sqr() / g_short[i];
    }
    -s * p.theta2.ln() - q_short / p.theta2 - s * p.theta1.ln() - q_log / p.theta1
}
