//! Sum-product network speaker models with missing-feature marginalisation.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`dsp`] turns 16 kHz waveforms into log-spectral subband energies (LSSEs).
//! - [`reliability`] mixes speech with noise at a target SNR and derives
//!   per-component reliability masks and [`Evidence`] from the oracle a-priori SNR.
//! - [`spn`] holds the sum-product network graph and its exact marginal and
//!   bounded-marginal inference.
//! - [`learn`] learns SPN structure from data (LearnSPN with RDC variable splits).
//! - [`gmm`] is the diagonal-covariance GMM baseline with identical evidence semantics.
//! - [`harness`] trains per-speaker models and runs the noise × SNR × mode experiment.
//! - [`format`] and [`matrix_io`] are the on-disk model, feature and mask formats.

pub mod dsp;
pub mod error;
pub mod format;
pub mod gaussian;
pub mod gmm;
pub mod harness;
pub mod learn;
pub mod matrix_io;
pub mod reliability;
pub mod seed;
pub mod spn;
pub mod wav;

pub use error::{Error, Result};
pub use spn::{Evidence, EvidenceState, GaussianLeaf, NodeId, SpnGraph, SpnNode, ValidityReport};

/// Variance floor applied to every Gaussian (leaves and GMM components), in feature units².
pub const VARIANCE_FLOOR: f64 = 1e-4;
