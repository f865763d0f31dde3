//! Certainty Volume Prediction (CVP) at desk scale.
//!
//! CVP models per-instance uncertainty as an isotropic Gaussian in feature
//! space: a feature extractor produces a mean feature `μ`, a small head
//! predicts a scalar standard deviation `σ`, and `M` features are sampled
//! from `N(μ, (σ·I)²)` via the reparameterization trick. Three losses are
//! trained jointly:
//!
//! - cross-entropy on the mean feature's logits,
//! - mean cross-entropy over the sampled features (weighted by `α`),
//! - an antagonistic regression pulling `σ` toward `ψ = max(0, κ − L_ce^φ)`,
//!   where `κ = ln(number of classes)`.
//!
//! Training is two-phase: source-only pretraining, then cycle-based
//! adaptation on mixed source/target batches with pseudo-labels regenerated
//! from the current weights at the start of every cycle.
//!
//! The crate is deliberately self-contained: a minimal reverse-mode tape
//! ([`autodiff`]), an MLP model ([`model`]), the sampling stage
//! ([`sampler`]), the loss terms ([`losses`]), synthetic domain-shift data
//! ([`data`]), the two-phase trainer ([`trainer`]), and post-hoc analysis
//! of boundary smoothness and uncertainty correlation ([`analysis`]).
//! [`experiment`] ties everything into reproducible, config-driven runs.

pub mod analysis;
pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{CvpError, Result};
