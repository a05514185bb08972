//! Noise calibration and certification toolkit for mutual-information
//! privacy budgets.
//!
//! The crate computes, certifies, and stress-tests noise distributions for
//! black-box mechanisms:
//!
//! - [`calibrators`]: Gaussian calibrators — spectral auto-calibration, the
//!   streaming variance-based variant, and the trace-minimal water-filling
//!   allocation, all against the LogDet surrogate bound.
//! - [`gap`]: estimators of the Gaussianity gap (KL to the moment-matched
//!   Gaussian) via score matching / Stein discrepancies and the
//!   fourth-cumulant lower bound, with gated corrected-MI reporting.
//! - [`srpac`]: the Stackelberg residual-budget solver — a leader noise rule
//!   trained against a follower decoder so the achieved conditional entropy
//!   meets the declared residual floor — plus composition accounting.
//! - [`oracle`]: ground-truth quadrature oracles (MI, conditional entropy,
//!   KL, directional MMSE) and a brute-force trace minimizer used to verify
//!   every certified number at desk scale.
//! - [`mechzoo`]: synthetic distributions and mechanisms for benchmarks.

pub mod calibrators;
pub mod domain;
pub mod error;
pub mod gap;
pub mod mechzoo;
pub mod oracle;
pub mod seed;
pub mod srpac;
pub mod stats;

pub use domain::{
    intrinsic_privacy_discrete, pac_advantage_kl, perturb, residual_pac_accounting,
    residual_to_mi_budget, sample_mechanism_outputs, BudgetSpec, CalibrationMethod,
    CalibrationReport, DataDistribution, EntropyProvenance, Mechanism, MechanismKind, NoiseModel,
};
pub use error::{Error, Result};
