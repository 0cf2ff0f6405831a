//! Estimation of multi-modal dense multipath components (DMC) from
//! frequency-domain radio-channel residuals.
//!
//! The crate covers the whole chain:
//!
//! * [`model`] and [`pdp`]: the parametric Toeplitz covariance of a DMC
//!   mixture, synthetic sampling, and power-delay-profile preprocessing;
//! * [`likelihood`]: negative log-likelihood, score and Fisher information
//!   in a log-reparametrised, unconstrained parameter space;
//! * [`estimator`]: moment-style initialisation, Levenberg-Marquardt
//!   refinement and the multi-mode driver;
//! * [`nn`]: a 1-D convolutional autoencoder that predicts the model order
//!   and separates up to three modes, trained on streamed synthetic data;
//! * [`crb`]: Cramér-Rao bounds for a specular path embedded in DMC and the
//!   model-order mismatch sweep;
//! * [`cli`]: the `dmc` command-line front end.

pub mod cli;
pub mod crb;
pub mod error;
pub mod estimator;
mod gemm;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod pdp;
pub mod seed;
pub mod tensor_io;

pub use error::{DmcError, Result};

pub use estimator::{estimate_multimode, init_single_mode, lm_refine, FitReport, LmOptions};
pub use likelihood::{fim, nll, score, EtaVector, SufficientStats};
pub use model::{
    build_full_covariance, build_mode_covariance, sample_observation, ChannelObservation, DmcModel, ModeParams,
};
pub use pdp::{denormalize, expected_pdp, normalize, preprocess, Pdp};
