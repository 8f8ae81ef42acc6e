//! Errors-in-variables slope estimation by noise matching.
//!
//! The crate fits a straight line between two noisy series when both carry
//! white measurement noise of unknown size. Closed-form estimators live in
//! [`regress`], the segmentation into elementary fluctuations and the
//! explanatory-power indices in [`fluct`], and the iterative artificial-noise
//! loop in [`noise`]. [`synth`] builds the validation datasets.

pub mod error;
pub mod fluct;
pub mod noise;
pub mod regress;
pub mod series;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use fluct::{explanatory_powers, segment, BoundaryKind, EpSummary, FluctuationPartition};
pub use noise::{fit_sinoma, q_ep, run_sinoma, SinomaConfig, SinomaResult};
pub use regress::{fit_evm, fit_inv, fit_ols, fit_rma, Method, NoiseRatio, SlopeEstimate};
pub use series::{MomentSummary, PairedSeries, Series};
