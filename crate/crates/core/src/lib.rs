//! Bayesian inter-battery factor analysis over heterogeneous views.
//!
//! Each view (real, multi-label binary or categorical) is explained by a
//! shared latent matrix `Z` through a view-specific loading matrix `W`.
//! Automatic relevance determination priors prune unused latent factors and,
//! optionally, irrelevant input features. Missing cells and missing labels
//! are treated as latent variables, which makes the model semi-supervised.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binary;
pub mod categorical;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod predictive;

pub use engine::{fit, FitReport};
pub use error::{Error, Result};
pub use model::{
    Hyperparameters, ModelState, ObservationSet, Priors, View, ViewData, ViewKind, ViewSpec,
};
