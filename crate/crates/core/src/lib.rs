//! Spectrally truncated simulation of diffusions in Hilbert space with
//! constant non-degenerate noise, `dX = dW + (AX + F(X)) dt`, together with
//! Monte Carlo and finite-difference diagnostics for hitting probabilities
//! of Q-ellipsoids.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod batch;
pub mod error;
pub mod kolmogorov;
pub mod noise;
pub mod observables;
pub mod positivity;
pub mod q_wiener;
pub mod scalar;
pub mod sde;
pub mod spectral_space;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Spectrum = spectral_space::CovarianceSpectrum<f64>;
pub type Vector = spectral_space::SpectralVector<f64>;
pub type Ellipsoid = spectral_space::Ellipsoid<f64>;
pub type Ball = spectral_space::Ball<f64>;
pub type Drift = sde::DriftModel<f64>;
pub type Operator = sde::LinearOperator<f64>;
pub type Initial = sde::InitialLaw<f64>;
pub type Batch = batch::TrajectoryBatch<f64>;
pub type Grid = batch::TimeGrid<f64>;

pub type Spectrum32 = spectral_space::CovarianceSpectrum<f32>;
pub type Vector32 = spectral_space::SpectralVector<f32>;
pub type Batch32 = batch::TrajectoryBatch<f32>;
pub type Model = sde::Model<f64>;
pub type Scenario = positivity::Scenario<f64>;
pub type GridDensity = kolmogorov::GridDensity<f64>;
