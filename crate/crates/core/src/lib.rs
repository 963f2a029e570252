//! Learning linear classifiers from data that is split across peers which
//! share a few features and the class, but no record identifiers.
//!
//! Instead of matching records across peers, every peer reports per-block
//! sums of its edge vectors (`y * x`) for each (signature, class) pair of
//! the binned shared features. A coordinator assembles these into
//! basic-block Rademacher observations, and the ridge-regularized square
//! loss of the fully matched sample is minimized through its rado-space
//! counterpart, the M-loss, in closed form.
//!
//! Modules:
//! * [`dataset`]: CSV ingestion, binning, peer splitting.
//! * [`rado`]: projections, lifts, peer rados, block assembly and oracles.
//! * [`protocol`]: the simulated coordinator/peer crafting protocol with
//!   communication accounting.
//! * [`learner`]: losses, closed-form solvers and cross-validation.
//! * [`eval`]: test error, the delta and q metrics, significance testing.
//! * [`experiment`]: the config-driven experiment runner.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod folds;
pub mod learner;
pub mod linalg;
pub mod protocol;
pub mod rado;

pub use dataset::{BinningRule, Dataset, Label, PeerView};
pub use error::{Error, Result};
pub use learner::{Model, Regularizer};
pub use protocol::{radocraft, CommLedger};
pub use rado::{BlockRado, RadoSet, Signature};
