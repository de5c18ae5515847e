//! Summary instrumental variable synthesis.
//!
//! Candidates, risk factor and outcome are binary (`±1`). The pipeline learns
//! which candidates are valid and how they depend on each other
//! ([`structlearn`]), recovers their accuracies with respect to a latent
//! instrument ([`paramlearn`]), converts every row into a posterior over that
//! instrument ([`posterior`]) and estimates the causal effect with a Wald
//! ratio over half-split replicates ([`effect`]).

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod effect;
pub mod error;
pub mod evalharness;
pub mod paramlearn;
pub mod pipeline;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod structlearn;

pub use data::{orient_candidates, validate, CandidateGraph, Dataset};
pub use error::{IvyError, Result};
pub use scalar::Real;

/// Double-precision instances of the scalar-generic kernels.
pub type Decomposition = structlearn::DecompositionResult<f64>;
pub type Decomposition32 = structlearn::DecompositionResult<f32>;
pub type LogisticFit = effect::LogisticFit<f64>;
pub type LogisticFit32 = effect::LogisticFit<f32>;
pub type MomentSystem = paramlearn::MomentSystem<f64>;
pub type SignRecovery = paramlearn::SignRecovery<f64>;
