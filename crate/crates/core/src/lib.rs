//! Average treatment effects on survival under non-proportional hazards,
//! adjusted by inverse probability of treatment weighting.
//!
//! Seven estimators reduce a weighted cohort to a pair of marginal survival
//! curves (treated and control), from which three estimands are read off:
//! the survival difference at fixed times, the median-survival difference,
//! and the restricted-mean-survival difference. A simulation harness
//! generates cohorts with known truth and scores bias, bootstrap standard
//! error and interval coverage.

pub mod aft;
pub mod bootstrap;
pub mod cox;
pub mod error;
pub mod estimands;
pub mod harness;
pub mod io;
pub mod model;
pub mod nonparam;
pub mod numeric;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod simdata;

pub use error::{Error, ErrorClass, Result};
pub use model::{evaluate_curve, Estimate, EstimandReport, StepCurve, SubjectRecord, WeightedSample};
