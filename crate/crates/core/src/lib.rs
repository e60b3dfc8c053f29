//! Joint device-activity detection and channel estimation for grant-free
//! massive access, built around a vector AMP recovery engine with a
//! Bernoulli-Gaussian MMSE denoiser.
//!
//! The crate is organized as:
//!
//! - [`model`]: random problem instances (pilots, activities, channels, noise)
//!   and synthesis of the received pilot-phase signal.
//! - [`specfun`]: self-contained special functions (log-Gamma, regularized
//!   incomplete Gamma, erfc) used by the analytic layer.
//! - [`amp`]: the vector AMP iteration with MMSE denoiser and Onsager
//!   correction.
//! - [`state_evolution`]: the scalar state-evolution recursion predicting the
//!   per-iteration effective noise variance, including the finite-antenna
//!   correction term and its massive-MIMO simplification.
//! - [`detector`]: the threshold-based activity detector and channel
//!   estimator operating on AMP outputs.
//! - [`analysis`]: closed-form detection error probabilities and
//!   channel-error covariances, exact and asymptotic in the antenna count.
//! - [`harness`]: seeded, parallel Monte Carlo experiment runner with
//!   analytic overlays and bit-stable CSV/JSON emission.

pub mod amp;
pub mod analysis;
pub mod detector;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod specfun;
pub mod state_evolution;

pub use amp::{AmpRun, AmpState, DenoiserOutput, TauPolicy};
pub use detector::{Confusion, DetectionReport};
pub use error::{Error, Result};
pub use harness::{ExperimentSpec, ResultRecord};
pub use model::{
    LargeScaleFading, PilotMatrix, ReceivedMatrix, SparseChannelMatrix, SystemConfig,
};
pub use state_evolution::{SeParams, SeTrajectory, SeVariant};
