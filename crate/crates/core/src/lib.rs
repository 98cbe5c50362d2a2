//! Latent conjunctive Bayesian networks for cognitive diagnosis.
//!
//! The crate covers attribute hierarchies and their permissible pattern
//! lattices, item response models, the LCBN pattern distribution, penalized
//! and structured EM estimation, identifiability checks, and a seeded
//! simulation harness.

pub mod error;
pub mod experiments;
pub mod hierarchy;
pub mod identifiability;
pub mod inference;
pub mod io;
pub mod lcbn;
pub mod measurement;
pub mod pattern;

pub use error::{Error, Result};
pub use identifiability::{
    build_gamma, check_dina_strict, check_generic, check_linear_necessary, check_slam_strict, ConditionReport,
    GammaMatrix, Verdict, Witness,
};
pub use hierarchy::{AttributeRole, Hierarchy, DEFAULT_ENUMERATION_CAP};
pub use measurement::{
    merge_attributes, sparsify_q, theta_dina, theta_gdina, DinaParams, GdinaParams, ItemParams, Link,
    MainEffectParams, MeasurementModel, QMatrix,
};
pub use inference::{
    learn_hierarchy, lcbn_em_fit, marginal_loglik, pem_fit, responsibilities, two_step_fit, Dataset,
    FitControl, FitResult,
};
pub use lcbn::{pattern_prob, proportions, sample_patterns, LcbnParams, ProportionVector};
pub use pattern::{AttributePattern, PatternSet};
