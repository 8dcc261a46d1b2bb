//! Model-agnostic explainability toolkit for black-box predictive functions.
//!
//! The crate provides:
//!
//! - a minimal model contract ([`model::BlackBoxModel`]) plus dataset and
//!   CSV ingestion plumbing,
//! - deterministic reference models ([`models`]) used as explanation targets
//!   and test oracles,
//! - a training-data-free local saliency explainer ([`lime`]),
//! - Kernel SHAP with pluggable background-generation strategies ([`shap`]),
//! - a metaheuristic counterfactual search ([`counterfactual`]),
//! - the evaluation-metric battery ([`metrics`]).
//!
//! Everything is deterministic under a fixed seed: explainers take explicit
//! RNG seeds and never consult ambient randomness.

pub mod counterfactual;
pub mod error;
pub mod kmeans;
pub mod lime;
mod linalg;
pub mod metrics;
pub mod model;
pub mod models;
pub mod shap;
mod stats;

pub use error::{Error, Result};
pub use model::{
    ingest_csv, mad_per_feature, predict_checked, BlackBoxModel, CountingModel, Dataset,
    DomainKind, Feature, FeatureDomain, FeatureSpec, FeatureValue, FeatureVector, Output,
    OutputVector,
};
