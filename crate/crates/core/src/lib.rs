//! Spectral dictionary learning for image generation.
//!
//! Images are flattened into 1-D signals and reconstructed as mixtures of K
//! learned sinusoidal atoms with time-modulated amplitude, frequency and
//! phase. Training fits the atoms and per-image mixing weights against a
//! time-domain squared error plus an STFT-magnitude L1 term. A Gaussian
//! fitted to the mixing weights then generates new images with a single
//! matrix-vector product.
//!
//! The pipeline, module by module:
//!
//! - [`dataset`]: CIFAR-10 binary batches in, PNG images out.
//! - [`dictionary`]: atoms, the modulation network, linear synthesis.
//! - [`stft`]: radix-2 FFT, magnitude spectrograms, the spectral L1 loss.
//! - [`training`]: hand-derived gradients, Adam, ridge encoding, gradient checks.
//! - [`prior`]: Gaussian fit, Cholesky sampling, generation.
//! - [`checkpoint`] and [`commands`]: persistence and the `sdg` command surface.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod dictionary;
pub mod error;
pub mod prior;
pub mod rng;
pub mod stft;
pub mod training;

pub use dataset::{make_time_grid, read_cifar_batch, write_png, ImageSignal, TimeGrid};
pub use dictionary::{
    reconstruct, softplus, synthesize_basis, BasisMatrix, MixingVector, ModulationNetwork, SpectralDictionary,
};
pub use error::{Error, Result};
pub use prior::{cholesky, fit_gaussian, generate, sample_prior, GaussianPrior};
pub use stft::{fft, loss_freq, stft_magnitude, Spectrogram, StftConfig, Window};
pub use training::{
    adam_step, backward, encode_ridge, gradient_check, loss_time, total_loss, train, MixingMatrix, TrainConfig,
};

/// CSV float formatting: 17 significant digits, round-trippable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
