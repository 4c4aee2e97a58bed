//! Noise-conditional maximum likelihood (NCML) for autoregressive density
//! models at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small tape-based reverse-mode engine over dense 2-D
//!   tensors, used for parameter gradients and for the score `∇ₓ log p`.
//! - [`sde`]: VE / VP / sub-VP forward diffusions, their Gaussian
//!   perturbation kernels and per-pixel perturbation statistics.
//! - [`logistic`] and [`model`]: the logistic-mixture head and the masked
//!   autoregressive network conditioned on a Fourier embedding of `t`.
//! - [`oracle`]: a diagonal Gaussian mixture with closed-form perturbed
//!   density and score.
//! - [`sanity`]: the ±1 least-significant-bit corruption and the
//!   Δ log p robustness sweep.
//! - [`training`]: MLE, NCML and regularized-MLE losses plus an Adam loop.
//! - [`sampling`]: ancestral, reverse-SDE, Langevin, two-phase sampling and
//!   raster-prefix completion.
//! - [`grid`], [`datasets`], [`checkpoint`]: file formats and toy data.
//!
//! Every numeric type is generic over [`Real`]; `f64` is the default and the
//! aliases below name the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod density;
pub mod error;
pub mod grid;
pub mod logistic;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod sanity;
pub mod scalar;
pub mod sde;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub use autodiff::{GradientBundle, Tape, Tensor, Var};
pub use density::{NoiseConditionalDensity, UniformDensity};
pub use grid::{Dataset, DiscreteGrid, RealVector};
pub use logistic::MixtureParams;
pub use model::{ModelArch, NcDensityModel};
pub use oracle::GaussianMixtureOracle;
pub use sde::{MarginalKernel, SdeKind, SdeSpec};

/// Double-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tape.
pub type Tape64 = Tape<f64>;
/// Double-precision noise-conditional model; the default for training.
pub type Model64 = NcDensityModel<f64>;
/// Single-precision model, e.g. for evaluating a loaded checkpoint.
pub type Model32 = NcDensityModel<f32>;
/// Double-precision Gaussian-mixture oracle.
pub type Oracle64 = GaussianMixtureOracle<f64>;
/// Double-precision mixture parameters.
pub type MixtureParams64 = MixtureParams<f64>;
