//! Kalman filter least squares: the recursive minimizer of a forgetting-weighted
//! least-squares cost over a linear time-varying model, its correspondence with the
//! Kalman filter, RLS forgetting strategies recast as process noise, and an adaptive
//! Kalman filter built from them.
//!
//! Everything is dense `f64` linear algebra on [`nalgebra::DMatrix`].

pub mod adaptive;
pub mod error;
pub mod experiment;
pub mod forgetting;
pub mod kalman;
pub mod kfls;
pub mod ltv;
pub mod msd;
pub mod random;
pub mod spd;
pub mod verify;

pub use adaptive::{adaptive_step, AdaptiveKfConfig, AdaptiveStepOutput};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, FilterConfig, ForgettingConfig};
pub use forgetting::{ForgettingInput, ForgettingStrategy, RateSource, RobustVffConfig, RobustVffState};
pub use kalman::{kf_one_step, kf_two_step, FilterState, NoiseSpec, StepDiagnostics};
pub use kfls::{f_from_sigma, kfls_step, sigma_from_f, KflsHistory, QuadraticForm};
pub use ltv::{InputHistory, LtvModel, SystemMatrices};
pub use msd::{discretize_zoh, measure, simulate_truth, MsdParams, Trajectory};
pub use spd::{Definiteness, SpdMatrix};
