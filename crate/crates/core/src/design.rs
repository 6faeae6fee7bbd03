use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for treating `m_i * theta_l` as an integer.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Relative cluster sizes of the simulation pattern, in units of `m_bar / 2`.
const PATTERN_HALVES: [u64; 8] = [1, 1, 1, 1, 2, 5, 4, 1];

/// Participants per cluster. At least two clusters, none empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct ClusterSizes(Vec<u64>);

impl ClusterSizes {
    pub fn new(sizes: Vec<u64>) -> Result<Self> {
        let mut v = Vec::new();
        size_violations(&sizes, &mut v);
        if v.is_empty() {
            Ok(Self(sizes))
        } else {
            Err(Error::InvalidDesign(v))
        }
    }

    /// `k` equal clusters of size `m`.
    pub fn equal(k: usize, m: u64) -> Result<Self> {
        Self::new(vec![m; k])
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.len() as f64
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&m| m as f64).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&m| m == self.0[0])
    }

    /// Every size multiplied by `lambda`.
    pub fn scaled(&self, lambda: u64) -> Result<Self> {
        Self::new(self.0.iter().map(|&m| m * lambda).collect())
    }
}

impl TryFrom<Vec<u64>> for ClusterSizes {
    type Error = Error;
    fn try_from(v: Vec<u64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClusterSizes> for Vec<u64> {
    fn from(c: ClusterSizes) -> Self {
        c.0
    }
}

/// Subgroup proportions `theta_1..theta_p`; the reference subgroup takes the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SubgroupSpec(Vec<f64>);

impl SubgroupSpec {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let mut v = Vec::new();
        theta_violations(&theta, &mut v);
        if v.is_empty() {
            Ok(Self(theta))
        } else {
            Err(Error::InvalidDesign(v))
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.0
    }

    pub fn p(&self) -> usize {
        self.0.len()
    }

    /// The single proportion of a one-subgroup specification.
    pub fn scalar(&self) -> Result<f64> {
        match self.0.as_slice() {
            [t] => Ok(*t),
            other => Err(Error::NotUnivariate(other.len())),
        }
    }
}

impl TryFrom<Vec<f64>> for SubgroupSpec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SubgroupSpec> for Vec<f64> {
    fn from(s: SubgroupSpec) -> Self {
        s.0
    }
}

/// A single broken design invariant. Cluster and subgroup indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignViolation {
    EmptyDesign,
    TooFewClusters {
        found: usize,
    },
    ZeroClusterSize {
        cluster: usize,
    },
    ArmCountOutOfRange {
        i1: usize,
        clusters: usize,
    },
    NoSubgroups,
    ThetaOutOfRange {
        subgroup: usize,
        value: f64,
    },
    ThetaSumTooLarge {
        sum: f64,
    },
    NonPositiveSigma {
        value: f64,
    },
    NonIntegerSubgroupCount {
        cluster: usize,
        subgroup: usize,
        count: f64,
    },
    NonIntegerSubgroupTotal {
        subgroup: usize,
        count: f64,
    },
}

impl fmt::Display for DesignViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DesignViolation::*;
        match self {
            EmptyDesign => write!(f, "no clusters given"),
            TooFewClusters { found } => write!(f, "need at least 2 clusters, found {found}"),
            ZeroClusterSize { cluster } => write!(f, "cluster {cluster} has size 0"),
            ArmCountOutOfRange { i1, clusters } => {
                write!(
                    f,
                    "i1 = {i1} must lie in 1..={}",
                    clusters.saturating_sub(1)
                )
            }
            NoSubgroups => write!(f, "theta is empty"),
            ThetaOutOfRange { subgroup, value } => {
                write!(f, "theta[{subgroup}] = {value} must lie in (0, 1)")
            }
            ThetaSumTooLarge { sum } => write!(f, "theta sums to {sum}, must be below 1"),
            NonPositiveSigma { value } => write!(f, "sigma_eps = {value} must be positive"),
            NonIntegerSubgroupCount {
                cluster,
                subgroup,
                count,
            } => write!(
                f,
                "cluster {cluster} subgroup {subgroup} count {count} is not an integer"
            ),
            NonIntegerSubgroupTotal { subgroup, count } => {
                write!(f, "subgroup {subgroup} total {count} is not an integer")
            }
        }
    }
}

fn size_violations(sizes: &[u64], out: &mut Vec<DesignViolation>) {
    match sizes.len() {
        0 => out.push(DesignViolation::EmptyDesign),
        1 => out.push(DesignViolation::TooFewClusters { found: 1 }),
        _ => {}
    }
    for (i, &m) in sizes.iter().enumerate() {
        if m == 0 {
            out.push(DesignViolation::ZeroClusterSize { cluster: i + 1 });
        }
    }
}

fn theta_violations(theta: &[f64], out: &mut Vec<DesignViolation>) {
    if theta.is_empty() {
        out.push(DesignViolation::NoSubgroups);
    }
    for (l, &t) in theta.iter().enumerate() {
        if !(t > 0.0 && t < 1.0) {
            out.push(DesignViolation::ThetaOutOfRange {
                subgroup: l + 1,
                value: t,
            });
        }
    }
    let sum: f64 = theta.iter().sum();
    if !(sum < 1.0) {
        out.push(DesignViolation::ThetaSumTooLarge { sum });
    }
}

/// The JSON form of a design: `sizes`, `i1`, `theta`, `sigma_eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDoc {
    pub sizes: Vec<u64>,
    pub i1: usize,
    pub theta: Vec<f64>,
    pub sigma_eps: f64,
}

/// A validated design: sizes, arm count, subgroup proportions and residual SD.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDesign {
    clusters: ClusterSizes,
    i1: usize,
    subgroups: SubgroupSpec,
    sigma_eps: f64,
    fixed_prevalence: bool,
}

/// Checks every design invariant and reports all violations at once.
pub fn validate_design(doc: &DesignDoc) -> Result<TrialDesign> {
    validate(doc, true)
}

/// As [`validate_design`], but only the trial-wide subgroup totals
/// `N theta_l` must be integral. Such designs can only be simulated with
/// drop-out, which reallocates subgroup members across clusters.
pub fn validate_dropout_design(doc: &DesignDoc) -> Result<TrialDesign> {
    validate(doc, false)
}

fn validate(doc: &DesignDoc, fixed_prevalence: bool) -> Result<TrialDesign> {
    let mut v = Vec::new();
    size_violations(&doc.sizes, &mut v);
    let n = doc.sizes.len();
    if n > 0 && (doc.i1 < 1 || doc.i1 >= n) {
        v.push(DesignViolation::ArmCountOutOfRange {
            i1: doc.i1,
            clusters: n,
        });
    }
    theta_violations(&doc.theta, &mut v);
    if !(doc.sigma_eps > 0.0 && doc.sigma_eps.is_finite()) {
        v.push(DesignViolation::NonPositiveSigma {
            value: doc.sigma_eps,
        });
    }
    let total: u64 = doc.sizes.iter().sum();
    for (l, &t) in doc.theta.iter().enumerate() {
        let c = total as f64 * t;
        if !fixed_prevalence && (c - c.round()).abs() > INTEGRALITY_TOL * total.max(1) as f64 {
            v.push(DesignViolation::NonIntegerSubgroupTotal {
                subgroup: l + 1,
                count: c,
            });
        }
    }
    for (i, &m) in doc.sizes.iter().enumerate() {
        if !fixed_prevalence {
            break;
        }
        for (l, &t) in doc.theta.iter().enumerate() {
            let c = m as f64 * t;
            if (c - c.round()).abs() > INTEGRALITY_TOL {
                v.push(DesignViolation::NonIntegerSubgroupCount {
                    cluster: i + 1,
                    subgroup: l + 1,
                    count: c,
                });
            }
        }
    }
    if !v.is_empty() {
        return Err(Error::InvalidDesign(v));
    }
    Ok(TrialDesign {
        clusters: ClusterSizes(doc.sizes.clone()),
        i1: doc.i1,
        subgroups: SubgroupSpec(doc.theta.clone()),
        sigma_eps: doc.sigma_eps,
        fixed_prevalence,
    })
}

impl TrialDesign {
    pub fn new(
        clusters: ClusterSizes,
        i1: usize,
        subgroups: SubgroupSpec,
        sigma_eps: f64,
    ) -> Result<Self> {
        validate_design(&DesignDoc {
            sizes: clusters.0,
            i1,
            theta: subgroups.0,
            sigma_eps,
        })
    }

    pub fn clusters(&self) -> &ClusterSizes {
        &self.clusters
    }

    pub fn i1(&self) -> usize {
        self.i1
    }

    pub fn i0(&self) -> usize {
        self.clusters.len() - self.i1
    }

    pub fn subgroups(&self) -> &SubgroupSpec {
        &self.subgroups
    }

    pub fn theta(&self) -> &[f64] {
        &self.subgroups.0
    }

    pub fn p(&self) -> usize {
        self.subgroups.p()
    }

    pub fn sigma_eps(&self) -> f64 {
        self.sigma_eps
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Whether every cluster holds an integral `m_i theta_l` members of each
    /// subgroup.
    pub fn has_fixed_prevalence(&self) -> bool {
        self.fixed_prevalence
    }

    /// Trial-wide head count of each subgroup.
    pub fn subgroup_totals(&self) -> Vec<u64> {
        let n = self.clusters.total() as f64;
        self.subgroups
            .0
            .iter()
            .map(|t| (n * t).round() as u64)
            .collect()
    }

    /// Subgroup head counts `m_i * theta_l` for cluster `i` (0-based).
    pub fn subgroup_counts(&self, i: usize) -> Vec<u64> {
        let m = self.clusters.0[i] as f64;
        self.subgroups
            .0
            .iter()
            .map(|t| (m * t).round() as u64)
            .collect()
    }

    pub fn to_doc(&self) -> DesignDoc {
        DesignDoc {
            sizes: self.clusters.0.clone(),
            i1: self.i1,
            theta: self.subgroups.0.clone(),
            sigma_eps: self.sigma_eps,
        }
    }

    pub fn summary(&self) -> DesignSummary {
        DesignSummary {
            clusters: self.num_clusters(),
            m_bar: self.clusters.mean(),
            theta: self.subgroups.0.clone(),
            sigma_eps: self.sigma_eps,
        }
    }
}

/// The quantities the closed-form power formulas consume. Unlike
/// [`TrialDesign`] it does not require integral subgroup counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub clusters: usize,
    pub m_bar: f64,
    pub theta: Vec<f64>,
    pub sigma_eps: f64,
}

impl DesignSummary {
    pub fn new(clusters: usize, m_bar: f64, theta: Vec<f64>, sigma_eps: f64) -> Result<Self> {
        let mut v = Vec::new();
        if clusters < 2 {
            v.push(DesignViolation::TooFewClusters { found: clusters });
        }
        theta_violations(&theta, &mut v);
        if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
            v.push(DesignViolation::NonPositiveSigma { value: sigma_eps });
        }
        if !v.is_empty() {
            return Err(Error::InvalidDesign(v));
        }
        if !(m_bar > 0.0 && m_bar.is_finite()) {
            return Err(Error::Domain(format!("m_bar = {m_bar} must be positive")));
        }
        Ok(Self {
            clusters,
            m_bar,
            theta,
            sigma_eps,
        })
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }
}

/// Fixed effects and ICC of the data-generating mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: Vec<f64>,
    pub beta4: Vec<f64>,
    pub rho: f64,
}

impl ModelParams {
    pub fn new(beta1: f64, beta2: f64, beta3: Vec<f64>, beta4: Vec<f64>, rho: f64) -> Result<Self> {
        if beta3.len() != beta4.len() {
            return Err(Error::DimensionMismatch {
                expected: beta3.len(),
                found: beta4.len(),
            });
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1)")));
        }
        Ok(Self {
            beta1,
            beta2,
            beta3,
            beta4,
            rho,
        })
    }

    pub fn p(&self) -> usize {
        self.beta4.len()
    }

    /// Random-intercept variance `sigma_eps^2 * rho / (1 - rho)`.
    pub fn sigma2_gamma(&self, sigma_eps: f64) -> f64 {
        sigma_eps * sigma_eps * self.rho / (1.0 - self.rho)
    }

    /// Total outcome variance given covariates, `sigma_eps^2 / (1 - rho)`.
    pub fn sigma2_y_given_x(&self, sigma_eps: f64) -> f64 {
        sigma_eps * sigma_eps / (1.0 - self.rho)
    }

    /// Same parameters with the interaction effects set to zero.
    pub fn null(&self) -> Self {
        Self {
            beta4: vec![0.0; self.beta4.len()],
            ..self.clone()
        }
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(
            self.beta1,
            self.beta2,
            self.beta3.clone(),
            self.beta4.clone(),
            rho,
        )
    }
}

/// `q` copies of the eight-cluster pattern with mean `m_bar`.
pub fn build_simulation_pattern(q: usize, m_bar: f64) -> Result<ClusterSizes> {
    if q == 0 {
        return Err(Error::Domain("q must be positive".into()));
    }
    if !(m_bar > 0.0 && m_bar.is_finite()) {
        return Err(Error::Domain(format!("m_bar = {m_bar} must be positive")));
    }
    let half = m_bar / 2.0;
    let mut block = Vec::with_capacity(PATTERN_HALVES.len());
    for &k in &PATTERN_HALVES {
        let value = half * k as f64;
        if (value - value.round()).abs() > INTEGRALITY_TOL {
            return Err(Error::NonIntegerPatternEntry { value });
        }
        block.push(value.round() as u64);
    }
    let sizes = block
        .iter()
        .copied()
        .cycle()
        .take(block.len() * q)
        .collect();
    ClusterSizes::new(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(sizes: Vec<u64>, i1: usize, theta: Vec<f64>) -> DesignDoc {
        DesignDoc {
            sizes,
            i1,
            theta,
            sigma_eps: 1.0,
        }
    }

    #[test]
    fn accepts_minimal_design() {
        let d = validate_design(&doc(vec![10, 10], 1, vec![0.5])).unwrap();
        assert_eq!(d.i0(), 1);
        assert_eq!(d.subgroup_counts(0), vec![5]);
    }

    #[test]
    fn rejects_all_clusters_in_one_arm() {
        let err = validate_design(&doc(vec![10, 10], 2, vec![0.5])).unwrap_err();
        assert_eq!(
            err,
            Error::InvalidDesign(vec![DesignViolation::ArmCountOutOfRange {
                i1: 2,
                clusters: 2
            }])
        );
    }

    #[test]
    fn reports_non_integer_count_with_one_based_index() {
        assert!(validate_design(&doc(vec![10, 15], 1, vec![0.4])).is_ok());
        let err = validate_design(&doc(vec![10, 15], 1, vec![0.3])).unwrap_err();
        match err {
            Error::InvalidDesign(v) => {
                assert_eq!(v.len(), 1);
                assert!(matches!(
                    v[0],
                    DesignViolation::NonIntegerSubgroupCount {
                        cluster: 2,
                        subgroup: 1,
                        ..
                    }
                ));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn third_share_is_integral_within_tolerance() {
        assert!(validate_design(&doc(vec![27; 40], 20, vec![1.0 / 3.0])).is_ok());
    }

    #[test]
    fn collects_every_violation() {
        let err = validate_design(&DesignDoc {
            sizes: vec![],
            i1: 0,
            theta: vec![0.7, 0.6],
            sigma_eps: -1.0,
        })
        .unwrap_err();
        let Error::InvalidDesign(v) = err else {
            panic!()
        };
        assert!(v.contains(&DesignViolation::EmptyDesign));
        assert!(v.contains(&DesignViolation::ThetaSumTooLarge { sum: 0.7 + 0.6 }));
        assert!(v.contains(&DesignViolation::NonPositiveSigma { value: -1.0 }));
    }

    #[test]
    fn pattern_q1() {
        let m = build_simulation_pattern(1, 20.0).unwrap();
        assert_eq!(m.as_slice(), &[10, 10, 10, 10, 20, 50, 40, 10]);
        let m2 = build_simulation_pattern(2, 20.0).unwrap();
        assert_eq!(&m2.as_slice()[..8], m.as_slice());
        assert_eq!(&m2.as_slice()[8..], m.as_slice());
    }

    #[test]
    fn pattern_cv2_by_hand() {
        let m = build_simulation_pattern(1, 20.0).unwrap();
        let mb = m.mean();
        let s2: f64 = m.as_f64().iter().map(|x| x * x).sum();
        assert_eq!(s2 / (8.0 * mb * mb) - 1.0, 0.5625);
    }

    #[test]
    fn pattern_rejects_odd_mean() {
        assert!(matches!(
            build_simulation_pattern(1, 21.0),
            Err(Error::NonIntegerPatternEntry { .. })
        ));
    }

    #[test]
    fn design_doc_round_trips_through_json() {
        let d = validate_design(&doc(vec![10, 20, 30], 1, vec![0.1, 0.2])).unwrap();
        let s = serde_json::to_string(&d.to_doc()).unwrap();
        let back: DesignDoc = serde_json::from_str(&s).unwrap();
        assert_eq!(validate_design(&back).unwrap(), d);
    }

    #[test]
    fn model_params_variance_split() {
        let p = ModelParams::new(0.0, 0.0, vec![0.0], vec![0.0], 0.2).unwrap();
        let s2 = 1.5f64 * 1.5;
        let g = p.sigma2_gamma(1.5);
        assert!((g / (g + s2) - 0.2).abs() < 1e-15);
        assert!((p.sigma2_y_given_x(1.5) - (g + s2)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pattern_mean_is_exact(q in 1usize..6, half in 1u64..200) {
            let m_bar = 2.0 * half as f64;
            let m = build_simulation_pattern(q, m_bar).unwrap();
            prop_assert_eq!(m.len(), 8 * q);
            prop_assert_eq!(m.total(), 8 * q as u64 * 2 * half);
            prop_assert_eq!(m.mean(), m_bar);
        }

        #[test]
        fn validation_is_idempotent(
            sizes in proptest::collection::vec(1u64..10, 2..12),
            i1_frac in 0.0f64..1.0,
        ) {
            let sizes: Vec<u64> = sizes.into_iter().map(|m| 4 * m).collect();
            let i1 = 1 + ((sizes.len() - 1) as f64 * i1_frac) as usize;
            let i1 = i1.min(sizes.len() - 1);
            let d = validate_design(&doc(sizes, i1, vec![0.25, 0.5])).unwrap();
            prop_assert_eq!(validate_design(&d.to_doc()).unwrap(), d);
        }
    }
}
