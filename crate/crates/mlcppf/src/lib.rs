//! Potential-passenger-flow prediction for areas that have no station
//! yet: localized correlation learning over origin-destination matrices
//! with adaptive k-nearest-neighbor weights and multi-view cross-domain
//! guidance, alongside reference baselines, evaluation metrics, a
//! masking-based experiment harness, and a synthetic-city generator.
//!
//! The pipeline, end to end:
//!
//! 1. [`datagen`] (or CSV ingestion via [`io`]) provides areas, daily OD
//!    flow matrices per time period, and statistical feature views.
//! 2. [`targetsim`] folds chosen target areas' flows into their closest
//!    known areas, simulating how passengers behave before a station
//!    exists.
//! 3. [`neighborhood`] scores area similarity from geography and
//!    features, selects each area's k nearest known areas, and seeds the
//!    adaptive weights.
//! 4. [`solver`] alternates normalized-gradient updates of the
//!    correlation matrix and the neighbor weights with fill-in of
//!    unobserved entries, then predicts target rows (departures) and,
//!    via the transposed pass, target columns (arrivals).
//! 5. [`baselines`] and [`eval`] benchmark the predictor under the
//!    masking protocol with MAE and NRMSE.

pub mod baselines;
pub mod core;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod neighborhood;
pub mod solver;
pub mod targetsim;

pub use crate::core::{
    build_mask, validate, AreaCatalog, FlowTensor, ObservationMask, Period, SolverConfig,
    ValidationReport, ViewSet,
};
pub use crate::error::{Error, Result};
