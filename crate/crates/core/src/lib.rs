//! Spectral estimation of integrated and spot volatility from noisy
//! high-frequency observations, with the Fisher information, Gaussian
//! experiment distances and Monte Carlo tooling used to check it.

pub mod equivalence;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod harness;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod stats;
pub mod volmodel;

pub use error::{Error, Result};
pub use estimators::{iv_estimate, spot_estimate, IVEstimate, NoiseCorrection, SpotCurve};
pub use simulate::{simulate_observations, simulate_spectral_exact, BlockGrid, ObservationSet};
pub use spectral::{compute_yjk0, CoefficientSource, SpectralCoefficients};
pub use volmodel::VolatilitySpec;
