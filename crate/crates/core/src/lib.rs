//! Mismatched estimation of a rank-one spike in rotationally invariant noise.
//!
//! The crate covers the rectangular free-probability transforms of singular
//! value laws, sampled spiked instances, closed-form mismatched-Bayes theory,
//! spectral estimators, Gaussian AMP and its state evolution over rectangular
//! free cumulants, and an experiment harness.

pub mod numerics;
pub mod transforms;

pub use transforms::{CumulantSequence, EdgeData, LawKind, SingularLaw, TransformError};
pub mod ensembles;
pub mod rng;
pub mod bayes_theory;
pub mod spectral;
pub mod amp;
pub mod state_evolution;
pub mod harness;
