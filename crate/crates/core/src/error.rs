use thiserror::Error;

use crate::design::DesignViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid design: {}", format_violations(.0))]
    InvalidDesign(Vec<DesignViolation>),
    #[error("design has no clusters")]
    EmptyDesign,
    #[error("intervention arm count {i1} must lie in 1..={max}", max = .clusters.saturating_sub(1))]
    ArmCountOutOfRange { i1: usize, clusters: usize },
    #[error("pattern entry {value} is not an integer")]
    NonIntegerPatternEntry { value: f64 },
    #[error("assignment puts every cluster in one arm")]
    DegenerateAssignment,
    #[error("need at least {needed} clusters, found {found}")]
    TooFewClusters { needed: usize, found: usize },
    #[error("{count} assignments exceed the enumeration cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: u64 },
    #[error("series approximation needs equal arms, got i1 = {i1} of {clusters}")]
    UnequalArms { i1: usize, clusters: usize },
    #[error("subgroup proportions do not give an invertible precision matrix")]
    SingularTheta,
    #[error("reference variance denominator is not positive ({0})")]
    DegenerateDenominator(f64),
    #[error("operation needs a single subgroup contrast, got {0}")]
    NotUnivariate(usize),
    #[error("no root in bracket [{lo}, {hi}]")]
    NoRootInBracket { lo: f64, hi: f64 },
    #[error("quadratic has non-positive discriminant ({0})")]
    NonPositiveDiscriminant(f64),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("length mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all {replicates} simulation replicates failed to fit")]
    SimulationFailed { replicates: u64 },
    #[error("argument out of domain: {0}")]
    Domain(String),
}

fn format_violations(v: &[DesignViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
