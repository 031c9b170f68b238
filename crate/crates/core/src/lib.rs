//! Pessimistic learning rules for offline linear contextual bandits.
//!
//! The crate implements the family of ℓp-confidence-set rules `π̂_p`
//! together with tabular LCB, PEVI, the plug-in rule and a tight tabular ℓ2
//! rule, generators for the hard instances that separate them, and a seeded
//! Monte Carlo harness that writes deterministic CSV results.

pub mod estimators;
pub mod experiments;
pub mod instances;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod verify;
