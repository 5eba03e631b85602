//! Joint segmentation and multifractal parameter estimation for images.
//!
//! The pipeline: a 2-D orthonormal wavelet transform produces detail
//! coefficients, from which wavelet leaders and centred log-leaders are
//! formed ([`transform`]). Per-region covariance of the log-leaders is
//! modelled in the Fourier domain and evaluated through a masked, debiased
//! Whittle likelihood ([`whittle`]). Region labels live on a multiscale
//! Potts field ([`potts`]); labels, region parameters, latent spectral
//! means and the Potts granularity coefficients are drawn by a Gibbs
//! sampler ([`sampler`]). Ground-truth test fields come from a 2-D
//! multifractal random walk synthesizer ([`synth`]); segmentation and
//! convergence diagnostics live in [`metrics`].

pub mod error;
pub mod fft;
pub mod grid;
pub mod metrics;
pub mod potts;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod transform;
pub mod whittle;

pub use error::{MfError, Result};
pub use grid::Grid;
