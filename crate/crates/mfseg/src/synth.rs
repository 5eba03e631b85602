//! Synthesis of multifractal random-walk textures and piecewise test
//! scenes.
//!
//! A realization on an `n x n` grid is built in three steps:
//!
//! 1. a log-multiplier `ω` with covariance `-c2 · ln⁺(L / (r + 1))` on the
//!    torus is drawn by circulant embedding (the covariance has support
//!    `r < L - 1 ≤ n/2`, so the embedding is exact up to eigenvalue
//!    round-off, which is clipped at zero) and shifted to mean
//!    `c2 · ln L = -Var(ω)`, which normalizes the second moment of the
//!    multiplier to `E[exp(2(ω+m))] = 1`;
//! 2. the innovation field is white standard Gaussian noise modulated in
//!    place by the multiplier: `w = g · exp(ω + m)`;
//! 3. the texture is the fractional integral of `w`: its spectrum is
//!    multiplied by `‖k‖^{-(c1+1)}` on min-image frequencies (zero DC).
//!
//! The result mimics a log-normal cascade: wavelet coefficients at scale
//! `j` behave like `2^{j(c1+1)}` times the box average of `w`, so their
//! log-variance inherits the coarse-grained multiplier variance
//! `-c2 ln(L/2^j)` — linear in `j ln 2` with slope `c2`, the relation the
//! whole pipeline estimates. `c2 = 0` degenerates to a monofractal
//! fractional Gaussian field with Hurst index `c1`.
//!
//! Everything is built on the torus, so the periodic wavelet transform
//! sees no wrap seam. Scenes stitch per-class innovation fields
//! (independent realizations, seeds derived per region) under a hard
//! label mask *before* the single global integration step; the filter is
//! class-independent (`c1` is shared), so each region interior keeps the
//! statistics of its homogeneous counterpart, while integrating
//! already-composed surfaces cut from independent walks would place an
//! order-of-field-range cliff along every boundary that the coarse-scale
//! wavelet leaders — not the texture — would then dominate.

use crate::error::{MfError, Result};
use crate::fft::Fft2;
use crate::grid::Grid;
use crate::rng::{chacha, derive, tag};
use num_complex::Complex;
use rand_distr::{Distribution, StandardNormal};

/// Parameters of one multifractal-random-walk realization.
#[derive(Clone, Debug, PartialEq)]
pub struct MrwSpec {
    /// Grid side; power of two, at least 8.
    pub n: usize,
    /// First log-cumulant (self-similarity index contribution).
    pub c1: f64,
    /// Second log-cumulant; 0 (monofractal) or negative.
    pub c2: f64,
    /// Integral scale `L` of the log-multiplier; at most `n/2`.
    pub integral_scale: f64,
    pub seed: u64,
}

impl MrwSpec {
    /// Defaults: `c1 = 0.5`, `L = n/4`.
    pub fn new(n: usize, c2: f64, seed: u64) -> Self {
        Self {
            n,
            c1: 0.5,
            c2,
            integral_scale: n as f64 / 4.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 || !self.n.is_power_of_two() {
            return Err(MfError::Dim(format!(
                "grid side {} must be a power of two >= 8",
                self.n
            )));
        }
        if self.c2 > 0.0 || !self.c2.is_finite() {
            return Err(MfError::Config(format!(
                "second log-cumulant must be <= 0, got {}",
                self.c2
            )));
        }
        let h = self.c1 + self.c2 / 2.0;
        if !(0.0..1.0).contains(&h) || h == 0.0 {
            return Err(MfError::Config(format!(
                "Hurst index c1 + c2/2 = {h} outside (0, 1)"
            )));
        }
        if !(2.0..=self.n as f64 / 2.0).contains(&self.integral_scale) {
            return Err(MfError::Config(format!(
                "integral scale {} outside [2, n/2]",
                self.integral_scale
            )));
        }
        Ok(())
    }
}

/// Draw a complex white field scaled by `amp(row, col)` and return the real
/// part of its unnormalized inverse FFT divided by `sqrt(n^2)`: a real
/// Gaussian field whose covariance is the inverse DFT of `amp^2`.
fn spectral_field<A>(
    n: usize,
    rng: &mut impl rand::Rng,
    amp: A,
    fft: &mut Fft2,
) -> Vec<f64>
where
    A: Fn(usize, usize) -> f64,
{
    let m = n * n;
    let mut buf = Vec::with_capacity(m);
    for r in 0..n {
        for c in 0..n {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            buf.push(Complex::new(a, b) * amp(r, c));
        }
    }
    fft.inverse(&mut buf, n);
    let norm = (m as f64).sqrt();
    buf.into_iter().map(|z| z.re / norm).collect()
}

/// Minimum-image frequency magnitude of bin `m` on an `n`-point axis.
#[inline]
fn min_image(m: usize, n: usize) -> f64 {
    m.min(n - m) as f64
}

/// Modulated innovation field `g · exp(ω + m)` of one realization (steps
/// 1 and 2), before integration.
fn innovations(spec: &MrwSpec, fft: &mut Fft2) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.n;

    let mut rng_g = chacha(spec.seed, tag::SYNTH_FRAC);
    let mut q: Vec<f64> = (0..n * n)
        .map(|_| StandardNormal.sample(&mut rng_g))
        .collect();

    // Log-multiplier by circulant embedding; skipped entirely when c2 = 0.
    if spec.c2 < 0.0 {
        let big_l = spec.integral_scale;
        let mut rho: Vec<Complex<f64>> = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let d = crate::whittle::torus_radius(r, c, n);
                let v = (-spec.c2) * (big_l / d.max(1.0)).ln().max(0.0);
                rho.push(Complex::new(v, 0.0));
            }
        }
        fft.forward(&mut rho, n);
        let mut rng_w = chacha(spec.seed, tag::SYNTH_LOGMULT);
        let omega = spectral_field(
            n,
            &mut rng_w,
            |r, c| rho[r * n + c].re.max(0.0).sqrt(),
            fft,
        );
        let mean_omega = spec.c2 * big_l.ln();
        for (qi, w) in q.iter_mut().zip(&omega) {
            *qi *= (w + mean_omega).exp();
        }
    }
    Ok(q)
}

/// Fractional integration on the torus: multiply the spectrum by
/// `‖k‖^{-(c1+1)}` (min-image frequencies, zero DC). The filter keeps the
/// field periodic and stationary, so the analysis transform sees no wrap
/// seam.
fn integrate(q: Vec<f64>, n: usize, c1: f64, fft: &mut Fft2) -> Grid<f64> {
    let mut buf: Vec<Complex<f64>> = q.into_iter().map(|v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut buf, n);
    let a = c1 + 1.0;
    for r in 0..n {
        for c in 0..n {
            let rad = min_image(r, n).hypot(min_image(c, n));
            buf[r * n + c] *= if rad == 0.0 { 0.0 } else { rad.powf(-a) };
        }
    }
    fft.inverse(&mut buf, n);
    let norm = (n * n) as f64;
    Grid::from_vec(n, n, buf.into_iter().map(|z| z.re / norm).collect())
}

/// One multifractal-texture realization.
pub fn synthesize(spec: &MrwSpec, fft: &mut Fft2) -> Result<Grid<f64>> {
    Ok(integrate(innovations(spec, fft)?, spec.n, spec.c1, fft))
}

/// A composed test scene: image, ground-truth labels (`0..k`), per-class
/// second log-cumulants.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Grid<f64>,
    pub labels: Grid<u8>,
    pub c2: Vec<f64>,
}

/// Stitch one independent innovation field per class under `labels`
/// (hard cut), then integrate the composite once. Class `i` is drawn
/// with seed `derive(seed, [SCENE_REGION, i])`.
pub fn compose(
    n: usize,
    seed: u64,
    class_c2: &[f64],
    labels: Grid<u8>,
    fft: &mut Fft2,
) -> Result<Scene> {
    if labels.rows() != n || labels.cols() != n {
        return Err(MfError::ShapeMismatch(format!(
            "label grid {}x{} does not match image side {n}",
            labels.rows(),
            labels.cols()
        )));
    }
    if let Some(&bad) = labels.data().iter().find(|&&l| (l as usize) >= class_c2.len()) {
        return Err(MfError::Config(format!(
            "label {bad} outside 0..{}",
            class_c2.len()
        )));
    }
    let mut stitched = vec![0.0f64; n * n];
    let mut c1 = 0.0;
    for (i, &c2) in class_c2.iter().enumerate() {
        let spec = MrwSpec::new(n, c2, derive(seed, &[tag::SCENE_REGION, i as u64]));
        c1 = spec.c1;
        let field = innovations(&spec, fft)?;
        for (dst, (lab, src)) in stitched
            .iter_mut()
            .zip(labels.data().iter().zip(&field))
        {
            if *lab as usize == i {
                *dst = *src;
            }
        }
    }
    Ok(Scene {
        image: integrate(stitched, n, c1, fft),
        labels,
        c2: class_c2.to_vec(),
    })
}

/// Disk membership mask: disk `i` paints label `i + 1` over background 0.
fn disk_labels(n: usize, centers: &[(f64, f64, f64)]) -> Grid<u8> {
    Grid::from_fn(n, n, |r, c| {
        for (i, &(cr, cc, rad)) in centers.iter().enumerate() {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            if dr * dr + dc * dc <= rad * rad {
                return (i + 1) as u8;
            }
        }
        0
    })
}

/// Background-plus-disks scene. Each disk is `(center row, center col,
/// radius)` and takes class `i + 1`; `class_c2[0]` is the background.
/// Disks must be pairwise disjoint and lie inside the image.
pub fn disk_scene(
    n: usize,
    seed: u64,
    class_c2: &[f64],
    disks: &[(f64, f64, f64)],
    fft: &mut Fft2,
) -> Result<Scene> {
    if disks.len() + 1 != class_c2.len() {
        return Err(MfError::Config(format!(
            "{} disks need {} classes, got {}",
            disks.len(),
            disks.len() + 1,
            class_c2.len()
        )));
    }
    for (i, &(cr, cc, rad)) in disks.iter().enumerate() {
        if !(rad > 0.0)
            || cr - rad < 0.0
            || cc - rad < 0.0
            || cr + rad > (n - 1) as f64
            || cc + rad > (n - 1) as f64
        {
            return Err(MfError::Config(format!(
                "disk {i} (center {cr}, {cc}, radius {rad}) leaves the {n}x{n} image"
            )));
        }
        for (j, &(or, oc, orad)) in disks.iter().enumerate().take(i) {
            if (cr - or).hypot(cc - oc) <= rad + orad {
                return Err(MfError::Config(format!("disks {j} and {i} overlap")));
            }
        }
    }
    compose(n, seed, class_c2, disk_labels(n, disks), fft)
}

/// Default per-class second log-cumulants of the two-class scene.
pub const DEFAULT_K2_C2: [f64; 2] = [-0.02, -0.08];
/// Default per-class second log-cumulants of the three-class scene.
pub const DEFAULT_K3_C2: [f64; 3] = [-0.02, -0.08, -0.16];

/// Two-class scene: background plus a centered disk of radius `n/4`.
pub fn scene_k2(n: usize, seed: u64, c2: [f64; 2], fft: &mut Fft2) -> Result<Scene> {
    let mid = n as f64 / 2.0 - 0.5;
    disk_scene(n, seed, &c2, &[(mid, mid, n as f64 / 4.0)], fft)
}

/// Three-class scene: background plus two disks of radius `n/8` centered
/// at `(5n/16, 5n/16)` and `(11n/16, 11n/16)`.
pub fn scene_k3(n: usize, seed: u64, c2: [f64; 3], fft: &mut Fft2) -> Result<Scene> {
    let a = 5.0 * n as f64 / 16.0 - 0.5;
    let b = 11.0 * n as f64 / 16.0 - 0.5;
    disk_scene(
        n,
        seed,
        &c2,
        &[(a, a, n as f64 / 8.0), (b, b, n as f64 / 8.0)],
        fft,
    )
}
