//! Relative-shift regression for compositional predictors.
//!
//! Compositions enter an intercept-free linear model directly, so coefficient
//! contrasts `beta_j - beta_k` are the effect of moving mass from taxon `k` to
//! taxon `j`. Equal coefficients mean the corresponding taxa can be summed into
//! one feature, and the penalties in [`penalty`] push the fit towards such
//! equi-sparse patterns, optionally guided by a taxonomic tree.
//!
//! The crate is organised bottom-up:
//!
//! * [`taxonomy`]: trees, Newick parsing, the ancestor indicator matrix and
//!   aggregating sets.
//! * [`composition`]: closed compositional matrices, zero truncation and
//!   seeded logistic-normal sampling.
//! * [`penalty`]: the four penalties and their dual-norm representation.
//! * [`solver`]: smoothing proximal gradient with FISTA momentum.
//! * [`model`]: the user-facing estimator.
//! * [`tuning`]: lambda grids and cross-validation.
//! * [`simulate`]: the benchmark generative designs.
//! * [`theorycheck`]: Monte-Carlo checks of the prediction error bound.

pub mod composition;
pub mod error;
pub mod linalg;
pub mod model;
pub mod par;
pub mod penalty;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod taxonomy;
pub mod theorycheck;
pub mod tuning;

pub use composition::{CompositionMatrix, CovariateMatrix};
pub use error::{Error, Result};
pub use model::{fit, predict, FitConfig, FitResult, RootPolicy};
pub use penalty::{DualForm, PenaltyKind, PenaltySpec};
pub use solver::{MuPolicy, SolverConfig, SolverReport};
pub use taxonomy::{AggregatingSet, IndicatorMatrix, TaxTree};
