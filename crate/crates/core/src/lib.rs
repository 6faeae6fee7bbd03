//! Design and verification of cluster randomized trials that target
//! heterogeneity of treatment effect across participant subgroups.
//!
//! When every cluster holds a fixed share of each subgroup, the variance of
//! the treatment-by-subgroup interaction estimator does not depend on the
//! intraclass correlation. This crate computes that variance, the
//! randomization inflation factor `psi`, power and sample sizes, and checks
//! all of it by simulating the linear mixed model and fitting it with
//! closed-form generalized least squares.

// Negated float comparisons reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod casestudy;
pub mod design;
pub mod dist;
pub mod error;
pub mod power;
pub mod randomization;
pub mod rng;
pub mod sim;
mod sum;

pub use design::{
    build_simulation_pattern, validate_design, validate_dropout_design, ClusterSizes, DesignDoc,
    DesignSummary, DesignViolation, ModelParams, SubgroupSpec, TrialDesign,
};
pub use error::{Error, Result};
pub use randomization::{Assignment, PsiEstimate, PsiMethod, SizeMoments};
