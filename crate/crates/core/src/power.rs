//! Closed-form variances of the interaction estimator, power, and
//! sample-size solvers.
//!
//! Nothing on the interaction-effect path takes the ICC as input: under a
//! fixed subgroup share per cluster its variance does not depend on it. Only
//! [`var_beta2`] and the two reference formulas consume `rho`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{ClusterSizes, DesignSummary, TrialDesign};
use crate::dist::{chisq_quantile, noncentral_chisq_sf, normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::randomization::{psi_rho, psi_series_real, wbar, Assignment};

/// Upper end of the bracket searched for the largest cluster size.
pub const EQUALIZER_BRACKET_MAX: f64 = 1e6;

/// Variance matrix of the interaction estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix(DMatrix<f64>);

impl VarianceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// The single entry of a 1x1 variance.
    pub fn scalar(&self) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::NotUnivariate(self.dim()));
        }
        Ok(self.0[(0, 0)])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// `(diag(theta) - theta theta')^{-1} = diag(theta)^{-1} + J / (1 - sum(theta))`.
pub fn theta_precision(theta: &[f64]) -> Result<DMatrix<f64>> {
    let rest = 1.0 - theta.iter().sum::<f64>();
    if theta.is_empty() || theta.iter().any(|&t| !(t > 0.0 && t < 1.0)) || !(rest > 0.0) {
        return Err(Error::SingularTheta);
    }
    let p = theta.len();
    let mut m = DMatrix::from_element(p, p, 1.0 / rest);
    for (l, &t) in theta.iter().enumerate() {
        m[(l, l)] += 1.0 / t;
    }
    Ok(m)
}

/// `diag(theta) - theta theta'`.
pub fn theta_covariance(theta: &[f64]) -> DMatrix<f64> {
    let t = DVector::from_column_slice(theta);
    DMatrix::from_diagonal(&t) - &t * t.transpose()
}

/// Variance of the interaction estimator given the assignment; exact for any
/// number of clusters and any ICC.
pub fn var_beta4_conditional(design: &TrialDesign, w: &Assignment) -> Result<VarianceMatrix> {
    let wb = wbar(design.clusters(), w)?;
    let n = design.clusters().total() as f64;
    let s2 = design.sigma_eps().powi(2);
    Ok(VarianceMatrix(
        theta_precision(design.theta())? * (s2 / (n * wb * (1.0 - wb))),
    ))
}

/// Unconditional variance `Omega_4 / I = sigma^2 psi / (I m_bar) (diag(theta) - theta theta')^{-1}`.
pub fn omega4(summary: &DesignSummary, psi: f64) -> Result<VarianceMatrix> {
    let scale = summary.sigma_eps.powi(2) * psi / (summary.clusters as f64 * summary.m_bar);
    Ok(VarianceMatrix(theta_precision(&summary.theta)? * scale))
}

/// Large-sample variance for equal cluster sizes with exchangeable covariate
/// correlation `rho_x`.
pub fn sigma4_equal_reference(
    m: f64,
    rho: f64,
    rho_x: f64,
    wbar_mean: f64,
    sigma2_y_given_x: f64,
    sigma2_x: f64,
) -> Result<f64> {
    let den = m
        * sigma2_x
        * wbar_mean
        * (1.0 - wbar_mean)
        * (1.0 + (m - 2.0) * rho - (m - 1.0) * rho_x * rho);
    if !(den > 0.0) {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(sigma2_y_given_x * (1.0 - rho) * (1.0 + (m - 1.0) * rho) / den)
}

/// Within-cluster covariate correlation for the unequal-size reference formula.
#[derive(Debug, Clone, PartialEq)]
pub enum RhoX {
    Common(f64),
    PerCluster(Vec<f64>),
    /// `-1 / (m_i - 1)`, implied by a fixed subgroup count in every cluster.
    FixedPrevalence,
}

/// Large-sample variance for variable cluster sizes, with expectations over
/// the size distribution replaced by means over `sizes`.
pub fn sigma4_unequal_reference(
    sizes: &ClusterSizes,
    rho: f64,
    rho_x: &RhoX,
    wbar_mean: f64,
    sigma2_y_given_x: f64,
    sigma2_x: f64,
) -> Result<f64> {
    let m = sizes.as_f64();
    let rx: Vec<f64> = match rho_x {
        RhoX::Common(r) => vec![*r; m.len()],
        RhoX::PerCluster(v) => {
            if v.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    found: v.len(),
                });
            }
            v.clone()
        }
        RhoX::FixedPrevalence => {
            if m.iter().any(|&x| x < 2.0) {
                return Err(Error::Domain(
                    "fixed-prevalence rho_x needs every m_i >= 2".into(),
                ));
            }
            m.iter().map(|&x| -1.0 / (x - 1.0)).collect()
        }
    };
    let n = m.len() as f64;
    let bracket: f64 = m
        .iter()
        .zip(&rx)
        .map(|(&mi, &r)| {
            let d = 1.0 + (mi - 1.0) * rho;
            let p = -mi * rho / d;
            let q = -mi * mi * rho / d;
            mi + (1.0 - r) * p + r * q
        })
        .sum::<f64>()
        / n;
    let den = sigma2_x * wbar_mean * (1.0 - wbar_mean) * bracket;
    if !(den > 0.0) {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(sigma2_y_given_x * (1.0 - rho) / den)
}

/// Randomization variance of the arm coefficient with its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta2Variance {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `E[1 / (wbar(rho)(1 - wbar(rho)))] / sum_i 1 / (sigma_eps^2 / m_i + sigma_gamma^2)`.
pub fn var_beta2(design: &TrialDesign, rho: f64) -> Result<Beta2Variance> {
    let psi = psi_rho(design.clusters(), design.i1(), rho)?;
    let s2 = design.sigma_eps().powi(2);
    let s2g = s2 * rho / (1.0 - rho);
    let harmonic: f64 = design
        .clusters()
        .as_f64()
        .iter()
        .map(|&m| 1.0 / (s2 / m + s2g))
        .sum();
    let n = design.num_clusters() as f64;
    Ok(Beta2Variance {
        value: psi / harmonic,
        lower: psi * s2g / n,
        upper: psi * (s2 + s2g) / n,
    })
}

/// Target alternative, test size and power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRequest {
    pub delta: Vec<f64>,
    pub alpha: f64,
    pub target_power: f64,
}

impl PowerRequest {
    pub fn new(delta: Vec<f64>, alpha: f64, target_power: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(target_power > alpha && target_power < 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < alpha < power < 1, got alpha {alpha}, power {target_power}"
            )));
        }
        if delta.is_empty() || delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Domain("delta must be finite and non-empty".into()));
        }
        Ok(Self {
            delta,
            alpha,
            target_power,
        })
    }

    /// One-dimensional request at the conventional 5% size and 80% power.
    pub fn scalar(delta: f64) -> Result<Self> {
        Self::new(vec![delta], 0.05, 0.8)
    }

    fn delta_scalar(&self) -> Result<f64> {
        match self.delta.as_slice() {
            [d] if *d != 0.0 => Ok(*d),
            [_] => Err(Error::Domain("delta must be non-zero for sizing".into())),
            other => Err(Error::NotUnivariate(other.len())),
        }
    }

    /// `z_{1 - alpha/2} + z_{power}`.
    pub fn z_sum(&self) -> Result<f64> {
        Ok(normal_quantile(1.0 - self.alpha / 2.0)? + normal_quantile(self.target_power)?)
    }
}

/// Wald power with the single-tail normal approximation
/// `Phi(z_{alpha/2} + |delta| / se)`, `se^2 = psi sigma^2 / (I m_bar theta (1 - theta))`.
pub fn power_wald_1d(delta: f64, summary: &DesignSummary, psi: f64, alpha: f64) -> Result<f64> {
    let theta = match summary.theta.as_slice() {
        [t] => *t,
        other => return Err(Error::NotUnivariate(other.len())),
    };
    let var = psi * summary.sigma_eps.powi(2)
        / (summary.clusters as f64 * summary.m_bar * theta * (1.0 - theta));
    Ok(normal_cdf(
        normal_quantile(alpha / 2.0)? + delta.abs() / var.sqrt(),
    ))
}

/// Noncentrality `I m_bar delta' (diag(theta) - theta theta') delta / (psi sigma^2)`.
pub fn noncentrality(delta: &[f64], summary: &DesignSummary, psi: f64) -> Result<f64> {
    if delta.len() != summary.p() {
        return Err(Error::DimensionMismatch {
            expected: summary.p(),
            found: delta.len(),
        });
    }
    let d = DVector::from_column_slice(delta);
    let quad = (d.transpose() * theta_covariance(&summary.theta) * &d)[(0, 0)];
    Ok(summary.clusters as f64 * summary.m_bar * quad / (psi * summary.sigma_eps.powi(2)))
}

/// Power of the chi-square test of all interaction effects.
pub fn power_chisq(delta: &[f64], summary: &DesignSummary, psi: f64, alpha: f64) -> Result<f64> {
    let lambda = noncentrality(delta, summary, psi)?;
    let p = summary.p() as u32;
    Ok(noncentral_chisq_sf(
        chisq_quantile(1.0 - alpha, p)?,
        p,
        lambda,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingMode {
    /// Closest multiple, halves rounded up.
    Nearest,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rounding {
    pub multiple: u64,
    pub mode: RoundingMode,
}

impl Rounding {
    pub fn nearest(multiple: u64) -> Self {
        Self {
            multiple,
            mode: RoundingMode::Nearest,
        }
    }

    pub fn up(multiple: u64) -> Self {
        Self {
            multiple,
            mode: RoundingMode::Up,
        }
    }

    /// `raw` placed on the grid of positive multiples.
    pub fn apply(&self, raw: f64) -> u64 {
        let k = self.multiple.max(1) as f64;
        let steps = match self.mode {
            RoundingMode::Nearest => (raw / k + 0.5).floor(),
            RoundingMode::Up => (raw / k).ceil(),
        };
        (steps.max(1.0) * k) as u64
    }
}

/// Required size before and after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSolution {
    pub raw: f64,
    pub rounded: u64,
}

/// Number of clusters, subgroup share and residual SD of a design whose
/// average cluster size is to be chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSkeleton {
    pub clusters: usize,
    pub theta: f64,
    pub sigma_eps: f64,
}

/// Smallest average cluster size reaching the target power:
/// `m_bar = psi (z_{1-alpha/2} + z_power)^2 sigma^2 / (I theta (1 - theta) delta^2)`.
pub fn min_avg_cluster_size(
    request: &PowerRequest,
    skeleton: &DesignSkeleton,
    psi: f64,
    rounding: Rounding,
) -> Result<SizeSolution> {
    let delta = request.delta_scalar()?;
    let z = request.z_sum()?;
    let t = skeleton.theta;
    let raw = psi * z * z * skeleton.sigma_eps.powi(2)
        / (skeleton.clusters as f64 * t * (1.0 - t) * delta * delta);
    Ok(SizeSolution {
        raw,
        rounded: rounding.apply(raw),
    })
}

/// What [`solve_equalizer`] solves for.
#[derive(Debug, Clone, PartialEq)]
pub enum EqualizerTarget {
    /// Common size of `clusters` equal clusters, `i1` of them treated.
    AverageSize { clusters: usize, i1: usize },
    /// Size of one extra cluster added to `fixed`, arms balanced.
    LargestCluster { fixed: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualizerSolution {
    /// The solved size: the common size, or the largest cluster.
    pub size: f64,
    /// `size` rounded up to an integer.
    pub rounded: u64,
    pub m_bar: f64,
    pub psi: f64,
}

/// Solves `I m_bar theta (1 - theta) delta^2 / sigma^2 = psi (z_{1-alpha/2} + z_power)^2`.
pub fn solve_equalizer(
    target: &EqualizerTarget,
    theta: f64,
    sigma_eps: f64,
    request: &PowerRequest,
) -> Result<EqualizerSolution> {
    let delta = request.delta_scalar()?;
    let z = request.z_sum()?;
    let info = theta * (1.0 - theta) * delta * delta / sigma_eps.powi(2);
    match target {
        EqualizerTarget::AverageSize { clusters, i1 } => {
            let (n, n1) = (*clusters as f64, *i1 as f64);
            if *i1 == 0 || i1 >= clusters {
                return Err(Error::ArmCountOutOfRange {
                    i1: *i1,
                    clusters: *clusters,
                });
            }
            let psi = n * n / (n1 * (n - n1));
            let size = psi * z * z / (n * info);
            Ok(EqualizerSolution {
                size,
                rounded: size.ceil() as u64,
                m_bar: size,
                psi,
            })
        }
        EqualizerTarget::LargestCluster { fixed } => {
            let n = fixed.len() + 1;
            let fixed_total: f64 = fixed.iter().sum();
            let mut sizes = fixed.clone();
            sizes.push(0.0);
            let mut psi_at = |x: f64| {
                sizes[n - 1] = x;
                psi_series_real(&sizes)
            };
            let gap = |x: f64, psi: f64| (fixed_total + x) * info - psi * z * z;
            let mut lo = fixed.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
            let mut hi = EQUALIZER_BRACKET_MAX;
            if gap(lo, psi_at(lo)?) >= 0.0 || gap(hi, psi_at(hi)?) <= 0.0 {
                return Err(Error::NoRootInBracket { lo, hi });
            }
            while hi - lo > 1e-13 * hi {
                let mid = 0.5 * (lo + hi);
                if gap(mid, psi_at(mid)?) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let size = 0.5 * (lo + hi);
            let psi = psi_at(size)?;
            Ok(EqualizerSolution {
                size,
                rounded: size.ceil() as u64,
                m_bar: (fixed_total + size) / n as f64,
                psi,
            })
        }
    }
}

/// Drop-out completely at random at rate `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::Domain(format!(
                "drop-out rate {rate} must lie in (0, 1)"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Reading of the finite-size constant in the drop-out variance bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutBracket {
    /// `S = (1/I) sum_i (I m_bar - m_i) / m_i`.
    #[default]
    General,
    /// `S / 2`, the constant the reduced eight-cluster formula carries.
    Reduced,
}

/// Finite-size constant of `pattern` under the chosen reading. It depends
/// only on relative sizes.
pub fn dropout_finite_size_constant(pattern: &ClusterSizes, bracket: DropoutBracket) -> f64 {
    let total = pattern.total() as f64;
    let n = pattern.len() as f64;
    let s = pattern
        .as_f64()
        .iter()
        .map(|&m| (total - m) / m)
        .sum::<f64>()
        / n;
    match bracket {
        DropoutBracket::General => s,
        DropoutBracket::Reduced => s / 2.0,
    }
}

/// `(theta^3 + (1 - theta)^3) / (theta^2 (1 - theta)^2)`.
pub fn subgroup_imbalance_factor(theta: f64) -> f64 {
    (theta.powi(3) + (1.0 - theta).powi(3)) / (theta * theta * (1.0 - theta).powi(2))
}

/// Inputs of the drop-out sizing and power formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutDesign {
    pub drop: DropoutSpec,
    pub clusters: usize,
    pub theta: f64,
    pub sigma_eps: f64,
    pub psi: f64,
    pub finite_size: f64,
}

impl DropoutDesign {
    pub fn from_pattern(
        drop: DropoutSpec,
        pattern: &ClusterSizes,
        theta: f64,
        sigma_eps: f64,
        psi: f64,
        bracket: DropoutBracket,
    ) -> Self {
        Self {
            drop,
            clusters: pattern.len(),
            theta,
            sigma_eps,
            psi,
            finite_size: dropout_finite_size_constant(pattern, bracket),
        }
    }

    /// Variance bracket `1/(theta(1-theta)) + g(theta) (r + S) / (I m_bar (1 - r))`.
    pub fn bracket(&self, m_bar: f64) -> f64 {
        let r = self.drop.rate;
        1.0 / (self.theta * (1.0 - self.theta))
            + subgroup_imbalance_factor(self.theta) * (r + self.finite_size)
                / (self.clusters as f64 * m_bar * (1.0 - r))
    }
}

/// Planned average cluster size: positive root of
/// `m^2 - C h m / (1 - r) - C g (r + S) / (I (1 - r)^2) = 0`,
/// `C = psi z^2 sigma^2 / (I delta^2)`, `h = 1 / (theta (1 - theta))`.
pub fn dropout_min_size(
    design: &DropoutDesign,
    request: &PowerRequest,
    rounding: Rounding,
) -> Result<SizeSolution> {
    let delta = request.delta_scalar()?;
    let z = request.z_sum()?;
    let n = design.clusters as f64;
    let r = design.drop.rate;
    let c = design.psi * z * z * design.sigma_eps.powi(2) / (n * delta * delta);
    let h = 1.0 / (design.theta * (1.0 - design.theta));
    let a = c * h / (1.0 - r);
    let b = c * subgroup_imbalance_factor(design.theta) * (r + design.finite_size)
        / (n * (1.0 - r).powi(2));
    let disc = a * a + 4.0 * b;
    if !(disc > 0.0) {
        return Err(Error::NonPositiveDiscriminant(disc));
    }
    let raw = 0.5 * (a + disc.sqrt());
    Ok(SizeSolution {
        raw,
        rounded: rounding.apply(raw),
    })
}

/// Power at planned average size `m_bar` after drop-out.
pub fn dropout_power(design: &DropoutDesign, m_bar: f64, delta: f64, alpha: f64) -> Result<f64> {
    let r = design.drop.rate;
    let scale = design.psi * design.sigma_eps.powi(2) / design.clusters as f64;
    let arg = (1.0 - r) * m_bar / (scale * design.bracket(m_bar));
    Ok(normal_cdf(
        normal_quantile(alpha / 2.0)? + delta.abs() * arg.sqrt(),
    ))
}

/// Fixed constants of the planned 16-cluster trial with 25% drop-out.
pub mod epic {
    use super::*;

    pub const CLUSTERS: usize = 16;
    pub const PLANNED_M_BAR: f64 = 40.0;
    pub const DROPOUT: f64 = 0.25;
    pub const SIGMA_EPS: f64 = 10.0;
    pub const THETA: f64 = 0.25;

    /// Power after drop-out as a function of subgroup share and effect.
    pub fn preset_power(theta: f64, delta: f64) -> Result<f64> {
        let bracket =
            1.0 / (theta * (1.0 - theta)) + 15.25 * subgroup_imbalance_factor(theta) / 480.0;
        Ok(normal_cdf(
            normal_quantile(0.025)? + delta.abs() / 10.0 * (120.0 / bracket).sqrt(),
        ))
    }

    /// Planned average cluster size reaching 80% power after drop-out:
    /// root of `m = K (h + 15.25 g / (12 m))`, `K = 100 z^2 / (3 delta^2)`.
    pub fn preset_size(theta: f64, delta: f64) -> Result<f64> {
        if delta == 0.0 || !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Domain(
                "need theta in (0, 1) and non-zero delta".into(),
            ));
        }
        let z = normal_quantile(0.975)? + normal_quantile(0.8)?;
        let k = 100.0 * z * z / (3.0 * delta * delta);
        let a = k / (theta * (1.0 - theta));
        let b = k * 15.25 * subgroup_imbalance_factor(theta) / 12.0;
        Ok(0.5 * (a + (a * a + 4.0 * b).sqrt()))
    }

    /// Power of the same trial without drop-out (30 analysed per cluster).
    pub fn no_dropout_power(delta: f64) -> Result<f64> {
        Ok(normal_cdf(
            normal_quantile(0.025)? + delta.abs() * 22.5f64.sqrt() / 10.0,
        ))
    }

    /// Average cluster size reaching 80% power without drop-out.
    pub fn no_dropout_size(theta: f64, delta: f64) -> Result<f64> {
        let z = normal_quantile(0.975)? + normal_quantile(0.8)?;
        Ok(4.0 * z * z * SIGMA_EPS.powi(2)
            / (CLUSTERS as f64 * theta * (1.0 - theta) * delta * delta))
    }

    /// The equal-cluster drop-out design the preset formulas specialise.
    pub fn design(theta: f64) -> Result<DropoutDesign> {
        let pattern = ClusterSizes::equal(CLUSTERS, PLANNED_M_BAR as u64)?;
        Ok(DropoutDesign::from_pattern(
            DropoutSpec::new(DROPOUT)?,
            &pattern,
            theta,
            SIGMA_EPS,
            4.0,
            DropoutBracket::General,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_simulation_pattern, validate_design, DesignDoc};
    use crate::randomization::{psi_approx, psi_exact};
    use proptest::prelude::*;

    const PSI_Q1: f64 = 4.380022;

    fn summary(i: usize, m: f64, theta: f64) -> DesignSummary {
        DesignSummary::new(i, m, vec![theta], 1.0).unwrap()
    }

    #[test]
    fn precision_scalar_and_matrix() {
        assert_eq!(theta_precision(&[0.5]).unwrap()[(0, 0)], 4.0);
        assert!((theta_precision(&[0.3]).unwrap()[(0, 0)] - 4.761905).abs() < 1e-6);
        let p = theta_precision(&[0.3, 0.3]).unwrap();
        let direct = theta_covariance(&[0.3, 0.3]).try_inverse().unwrap();
        assert!((&p - &direct).abs().max() < 1e-10);
        assert!((p[(0, 1)] - 2.5).abs() < 1e-12);
        assert!(theta_precision(&[0.6, 0.4]).is_err());
        assert!(theta_precision(&[1.0]).is_err());
    }

    #[test]
    fn conditional_variance_plug_in() {
        let d = validate_design(&DesignDoc {
            sizes: vec![20; 8],
            i1: 4,
            theta: vec![0.5],
            sigma_eps: 1.0,
        })
        .unwrap();
        let w = Assignment::from_indicators(&[1, 1, 1, 1, 0, 0, 0, 0]);
        assert!((var_beta4_conditional(&d, &w).unwrap().scalar().unwrap() - 0.1).abs() < 1e-15);
        let d3 = validate_design(&DesignDoc {
            theta: vec![0.3],
            ..d.to_doc()
        })
        .unwrap();
        let v = var_beta4_conditional(&d3, &w).unwrap().scalar().unwrap();
        assert!((v - 1.0 / (160.0 * 0.25 * 0.21)).abs() < 1e-15);
    }

    #[test]
    fn omega4_reproduces_table_one_cell() {
        let v = omega4(&summary(8, 20.0, 0.5), PSI_Q1)
            .unwrap()
            .scalar()
            .unwrap();
        assert!((v - 0.109500).abs() < 1e-6);
        assert!((v.sqrt() - 0.3309).abs() < 5e-5);
        let v2 = omega4(&summary(16, 20.0, 0.5), PSI_Q1)
            .unwrap()
            .scalar()
            .unwrap();
        assert!((v2 - v / 2.0).abs() < 1e-15);
    }

    #[test]
    fn equal_reference_reductions() {
        let (m, rho, w) = (12.0, 0.3, 0.5);
        let a = sigma4_equal_reference(m, rho, -1.0 / (m - 1.0), w, 2.0, 0.21).unwrap();
        let s2e = 2.0 * (1.0 - rho);
        assert!((a - s2e / (m * 0.21 * 0.25)).abs() < 1e-12);
        let b = sigma4_equal_reference(m, 0.0, 0.4, w, 2.0, 0.21).unwrap();
        assert!((b - 2.0 / (m * 0.21 * 0.25)).abs() < 1e-12);
        let c = sigma4_equal_reference(10.0, 0.2, 0.1, 0.5, 1.0, 0.25).unwrap();
        let by_hand = 1.0 * 0.8 * (1.0 + 9.0 * 0.2)
            / (10.0 * 0.25 * 0.25 * (1.0 + 8.0 * 0.2 - 9.0 * 0.1 * 0.2));
        assert!((c - by_hand).abs() < 1e-14);
        assert!(matches!(
            sigma4_equal_reference(10.0, 0.2, 0.1, 1.0, 1.0, 0.25),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn unequal_reference_reductions() {
        let eq = ClusterSizes::equal(6, 10).unwrap();
        let a = sigma4_unequal_reference(&eq, 0.2, &RhoX::Common(0.1), 0.5, 1.3, 0.25).unwrap();
        let b = sigma4_equal_reference(10.0, 0.2, 0.1, 0.5, 1.3, 0.25).unwrap();
        assert!((a - b).abs() < 1e-12 * b);

        let m = ClusterSizes::new(vec![4, 9, 13, 30]).unwrap();
        let v = sigma4_unequal_reference(&m, 0.4, &RhoX::FixedPrevalence, 0.5, 1.0, 0.25).unwrap();
        assert!((v - 0.6 / (m.mean() * 0.25 * 0.25)).abs() < 1e-12);

        let v0 = sigma4_unequal_reference(&m, 0.0, &RhoX::Common(0.3), 0.5, 1.0, 0.25).unwrap();
        assert!((v0 - 1.0 / (m.mean() * 0.25 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn heuristic_chain_on_constant_sizes() {
        // reference variance with rho_x = -1/(m-1), over I, equals Omega_4 / I with
        // psi replaced by 1/(W(1-W)) at the mean share
        let m = ClusterSizes::equal(10, 8).unwrap();
        let wb = 0.5;
        let rho = 0.37;
        let s2e = 1.7;
        let r =
            sigma4_unequal_reference(&m, rho, &RhoX::FixedPrevalence, wb, s2e / (1.0 - rho), 0.21)
                .unwrap()
                / 10.0;
        let s = DesignSummary::new(10, 8.0, vec![0.3], s2e.sqrt()).unwrap();
        let o = omega4(&s, 1.0 / (wb * (1.0 - wb)))
            .unwrap()
            .scalar()
            .unwrap();
        assert!((r - o).abs() < 1e-10 * o);
    }

    #[test]
    fn beta2_variance_cases() {
        let d = validate_design(&DesignDoc {
            sizes: vec![4, 8, 12, 16, 20, 8],
            i1: 3,
            theta: vec![0.25],
            sigma_eps: 1.5,
        })
        .unwrap();
        let v0 = var_beta2(&d, 0.0).unwrap();
        let psi = psi_exact(d.clusters(), 3).unwrap().value;
        assert!((v0.value - psi * 2.25 / 68.0).abs() < 1e-14);
        assert_eq!(v0.lower, 0.0);

        let e = validate_design(&DesignDoc {
            sizes: vec![8; 6],
            ..d.to_doc()
        })
        .unwrap();
        let rho = 0.2;
        let s2g = 2.25 * rho / (1.0 - rho);
        let ve = var_beta2(&e, rho).unwrap();
        assert!((ve.value - 4.0 * (2.25 / 8.0 + s2g) / 6.0).abs() < 1e-14);

        for rho in [0.01, 0.2, 0.6, 0.95] {
            let v = var_beta2(&d, rho).unwrap();
            assert!(v.lower < v.value && v.value < v.upper);
        }
    }

    #[test]
    fn wald_power_table_two_cells() {
        let p = power_wald_1d(0.35, &summary(8, 140.0, 0.5), PSI_Q1, 0.05).unwrap();
        assert!((p - 0.7991).abs() < 5e-4, "{p}");
        let p = power_wald_1d(0.25, &summary(8, 320.0, 0.3), PSI_Q1, 0.05).unwrap();
        assert!((p - 0.7910).abs() < 5e-4, "{p}");
        let p0 = power_wald_1d(0.0, &summary(8, 320.0, 0.3), PSI_Q1, 0.05).unwrap();
        assert!((p0 - 0.025).abs() < 1e-12);
        let two = DesignSummary::new(8, 20.0, vec![0.3, 0.3], 1.0).unwrap();
        assert_eq!(
            power_wald_1d(0.3, &two, 4.0, 0.05),
            Err(Error::NotUnivariate(2))
        );
    }

    #[test]
    fn chisq_power_identities() {
        let s = summary(8, 140.0, 0.5);
        assert!((power_chisq(&[0.0], &s, PSI_Q1, 0.05).unwrap() - 0.05).abs() < 1e-12);
        let z = normal_quantile(0.975).unwrap();
        for d in [0.05, 0.1, 0.2, 0.3, 0.35, 0.5] {
            let lam = noncentrality(&[d], &s, PSI_Q1).unwrap();
            let two_sided = normal_cdf(-z + lam.sqrt()) + normal_cdf(-z - lam.sqrt());
            let c = power_chisq(&[d], &s, PSI_Q1, 0.05).unwrap();
            assert!((c - two_sided).abs() < 1e-6);
            let w = power_wald_1d(d, &s, PSI_Q1, 0.05).unwrap();
            if c >= 0.5 {
                assert!((c - w).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn chisq_power_two_subgroups_by_hand() {
        let s = DesignSummary::new(16, 60.0, vec![0.3, 0.3], 1.0).unwrap();
        // delta' (diag(theta) - theta theta') delta = 0.3*0.09*2 - (0.18)^2
        let quad = 0.3 * 0.09 * 2.0 - 0.18f64 * 0.18;
        let lam = 16.0 * 60.0 * quad / 4.165;
        assert!((noncentrality(&[0.3, 0.3], &s, 4.165).unwrap() - lam).abs() < 1e-12);
        let crit = chisq_quantile(0.95, 2).unwrap();
        let expected = noncentral_chisq_sf(crit, 2, lam);
        assert_eq!(power_chisq(&[0.3, 0.3], &s, 4.165, 0.05).unwrap(), expected);
    }

    #[test]
    fn sizing_examples() {
        let sk = |theta| DesignSkeleton {
            clusters: 8,
            theta,
            sigma_eps: 1.0,
        };
        let r = min_avg_cluster_size(
            &PowerRequest::scalar(0.35).unwrap(),
            &sk(0.5),
            PSI_Q1,
            Rounding::nearest(4),
        )
        .unwrap();
        assert!((r.raw - 140.32).abs() < 0.01, "{}", r.raw);
        assert_eq!(r.rounded, 140);
        let r = min_avg_cluster_size(
            &PowerRequest::scalar(0.25).unwrap(),
            &sk(0.3),
            PSI_Q1,
            Rounding::nearest(20),
        )
        .unwrap();
        assert_eq!(r.rounded, 320);
        let m16 = build_simulation_pattern(2, 20.0).unwrap();
        let psi2 = psi_approx(&m16, 8).unwrap().value;
        let sk16 = DesignSkeleton {
            clusters: 16,
            theta: 0.5,
            sigma_eps: 1.0,
        };
        let r = min_avg_cluster_size(
            &PowerRequest::scalar(0.25).unwrap(),
            &sk16,
            psi2,
            Rounding::nearest(4),
        )
        .unwrap();
        assert!((r.raw - 130.8).abs() < 0.1, "{}", r.raw);
        assert_eq!(r.rounded, 132);
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(Rounding::nearest(10).apply(176.3), 180);
        assert_eq!(Rounding::nearest(10).apply(175.0), 180);
        assert_eq!(Rounding::nearest(10).apply(174.99), 170);
        assert_eq!(Rounding::up(3).apply(24.01), 27);
        assert_eq!(Rounding::up(3).apply(24.0), 24);
        assert_eq!(Rounding::nearest(4).apply(0.3), 4);
    }

    #[test]
    fn equalizer_average_matches_closed_form() {
        let req = PowerRequest::scalar(0.3).unwrap();
        let e = solve_equalizer(
            &EqualizerTarget::AverageSize {
                clusters: 40,
                i1: 20,
            },
            1.0 / 3.0,
            0.49,
            &req,
        )
        .unwrap();
        let sk = DesignSkeleton {
            clusters: 40,
            theta: 1.0 / 3.0,
            sigma_eps: 0.49,
        };
        let m = min_avg_cluster_size(&req, &sk, 4.0, Rounding::up(1)).unwrap();
        assert!((e.size - m.raw).abs() < 1e-12 * m.raw);
        assert_eq!(e.psi, 4.0);
    }

    #[test]
    fn equalizer_largest_cluster_holds_at_root() {
        let req = PowerRequest::scalar(0.3).unwrap();
        let fixed = vec![3.0; 39];
        let e = solve_equalizer(
            &EqualizerTarget::LargestCluster {
                fixed: fixed.clone(),
            },
            1.0 / 3.0,
            0.49,
            &req,
        )
        .unwrap();
        let z = req.z_sum().unwrap();
        let lhs = 40.0 * e.m_bar * (2.0 / 9.0) * 0.09 / 0.49f64.powi(2);
        assert!((lhs / (e.psi * z * z) - 1.0).abs() < 1e-8);
        let mut s = fixed;
        s.push(e.size);
        assert_eq!(psi_series_real(&s).unwrap(), e.psi);
        let big = PowerRequest::scalar(5.0).unwrap();
        assert!(matches!(
            solve_equalizer(
                &EqualizerTarget::LargestCluster {
                    fixed: vec![3.0; 39]
                },
                1.0 / 3.0,
                0.49,
                &big
            ),
            Err(Error::NoRootInBracket { .. })
        ));
    }

    fn table4_designs(rate: f64) -> (DropoutDesign, DropoutDesign) {
        let pattern = build_simulation_pattern(1, 20.0).unwrap();
        let drop = DropoutSpec::new(rate).unwrap();
        let mk = |b| DropoutDesign::from_pattern(drop, &pattern, 0.5, 1.0, PSI_Q1, b);
        (mk(DropoutBracket::Reduced), mk(DropoutBracket::General))
    }

    #[test]
    fn finite_size_constants_of_pattern() {
        let pattern = build_simulation_pattern(1, 20.0).unwrap();
        assert!(
            (dropout_finite_size_constant(&pattern, DropoutBracket::General) - 10.9).abs() < 1e-12
        );
        assert!(
            (dropout_finite_size_constant(&pattern, DropoutBracket::Reduced) - 5.45).abs() < 1e-12
        );
        let scaled = pattern.scaled(7).unwrap();
        assert_eq!(
            dropout_finite_size_constant(&pattern, DropoutBracket::General),
            dropout_finite_size_constant(&scaled, DropoutBracket::General)
        );
    }

    #[test]
    fn dropout_sizing_and_power() {
        let (reduced, general) = table4_designs(0.2);
        let s = dropout_min_size(
            &reduced,
            &PowerRequest::scalar(0.35).unwrap(),
            Rounding::nearest(10),
        )
        .unwrap();
        assert!((s.raw - 176.3).abs() < 0.1, "{}", s.raw);
        assert_eq!(s.rounded, 180);
        let (reduced, general25) = table4_designs(0.25);
        let s = dropout_min_size(
            &reduced,
            &PowerRequest::scalar(0.45).unwrap(),
            Rounding::nearest(4),
        )
        .unwrap();
        assert_eq!(s.rounded, 116);
        let p = dropout_power(&general25, 368.0, 0.25, 0.05).unwrap();
        assert!((p - 0.7994).abs() < 2e-3, "{p}");
        let (_, general3) = table4_designs(0.3);
        let p = dropout_power(&general3, 120.0, 0.45, 0.05).unwrap();
        assert!((p - 0.7893).abs() < 2e-3, "{p}");
        let _ = general;
    }

    #[test]
    fn dropout_quadratic_satisfies_its_equation() {
        let (reduced, _) = table4_designs(0.3);
        let req = PowerRequest::scalar(0.25).unwrap();
        let s = dropout_min_size(&reduced, &req, Rounding::nearest(1)).unwrap();
        let z = req.z_sum().unwrap();
        let c = PSI_Q1 * z * z / (8.0 * 0.0625);
        let rhs = c / 0.7 * reduced.bracket(s.raw);
        assert!((s.raw - rhs).abs() < 1e-9 * s.raw);
        // power at the unrounded root is the target
        let p = dropout_power(&reduced, s.raw, 0.25, 0.05).unwrap();
        assert!((p - 0.8).abs() < 1e-9);
    }

    #[test]
    fn dropout_power_approaches_wald_for_small_rate_and_large_size() {
        let pattern = build_simulation_pattern(1, 20.0).unwrap();
        let d = DropoutDesign::from_pattern(
            DropoutSpec::new(1e-9).unwrap(),
            &pattern,
            0.5,
            1.0,
            PSI_Q1,
            DropoutBracket::Reduced,
        );
        let m = 1e7;
        let a = dropout_power(&d, m, 0.002, 0.05).unwrap();
        let b = power_wald_1d(0.002, &summary(8, m, 0.5), PSI_Q1, 0.05).unwrap();
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn epic_literal_matches_general_formula() {
        for &theta in &[0.1, 0.25, 0.5, 0.8] {
            let d = epic::design(theta).unwrap();
            for &delta in &[2.5, 5.0, 6.13, 10.0] {
                let a = epic::preset_power(theta, delta).unwrap();
                let b = dropout_power(&d, epic::PLANNED_M_BAR, delta, 0.05).unwrap();
                assert!((a - b).abs() < 1e-12, "theta {theta} delta {delta}");
            }
            let m = epic::preset_size(theta, 6.0).unwrap();
            let g = dropout_min_size(
                &d,
                &PowerRequest::scalar(6.0).unwrap(),
                Rounding::nearest(1),
            )
            .unwrap();
            assert!((m - g.raw).abs() < 1e-9 * m);
        }
        let s = DesignSummary::new(16, 30.0, vec![0.25], 10.0).unwrap();
        for &delta in &[3.0, 5.91, 8.0] {
            let a = epic::no_dropout_power(delta).unwrap();
            let b = power_wald_1d(delta, &s, 4.0, 0.05).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        let m = epic::no_dropout_size(0.25, 5.91).unwrap();
        let sk = DesignSkeleton {
            clusters: 16,
            theta: 0.25,
            sigma_eps: 10.0,
        };
        let g = min_avg_cluster_size(
            &PowerRequest::scalar(5.91).unwrap(),
            &sk,
            4.0,
            Rounding::nearest(1),
        )
        .unwrap();
        assert!((m - g.raw).abs() < 1e-9 * m);
    }

    #[test]
    fn epic_thresholds_are_near_eighty_percent() {
        assert!((epic::preset_power(0.25, 6.13).unwrap() - 0.8).abs() < 2e-3);
        assert!((epic::no_dropout_power(5.91).unwrap() - 0.8).abs() < 2e-3);
    }

    proptest! {
        #[test]
        fn wald_power_monotone(
            delta in 0.01f64..1.0, i in 4usize..40, m in 5.0f64..200.0,
            psi in 4.0f64..10.0, theta in 0.05f64..0.95,
        ) {
            let base = power_wald_1d(delta, &summary(i, m, theta), psi, 0.05).unwrap();
            prop_assume!(base < 1.0 - 1e-9);
            prop_assert!(power_wald_1d(delta * 1.1, &summary(i, m, theta), psi, 0.05).unwrap() > base);
            prop_assert!(power_wald_1d(delta, &summary(i + 1, m, theta), psi, 0.05).unwrap() > base);
            prop_assert!(power_wald_1d(delta, &summary(i, m * 1.1, theta), psi, 0.05).unwrap() > base);
            prop_assert!(power_wald_1d(delta, &summary(i, m, theta), psi * 1.1, 0.05).unwrap() < base);
            prop_assume!(base < 1.0 - 1e-9);
            let half = power_wald_1d(delta, &summary(i, m, 0.5), psi, 0.05).unwrap();
            prop_assert!(half >= base);
        }

        #[test]
        fn chisq_power_monotone(
            d1 in 0.01f64..0.5, d2 in -0.5f64..0.5, i in 4usize..30, m in 5.0f64..100.0,
            psi in 4.0f64..10.0,
        ) {
            let s = |i, m| DesignSummary::new(i, m, vec![0.3, 0.2], 1.0).unwrap();
            let base = power_chisq(&[d1, d2], &s(i, m), psi, 0.05).unwrap();
            prop_assume!(base < 1.0 - 1e-9);
            prop_assert!(power_chisq(&[d1 * 1.2, d2 * 1.2], &s(i, m), psi, 0.05).unwrap() > base);
            prop_assert!(power_chisq(&[d1, d2], &s(i + 1, m), psi, 0.05).unwrap() > base);
            prop_assert!(power_chisq(&[d1, d2], &s(i, m * 1.1), psi, 0.05).unwrap() > base);
            prop_assert!(power_chisq(&[d1, d2], &s(i, m), psi * 1.1, 0.05).unwrap() < base);
        }

        #[test]
        fn half_share_maximises_epic_power(theta in 0.01f64..0.99, delta in 1.0f64..12.0) {
            let best = epic::preset_power(0.5, delta).unwrap();
            prop_assert!(epic::preset_power(theta, delta).unwrap() <= best + 1e-15);
        }

        #[test]
        fn variance_smallest_at_half_share(num in 1u64..99) {
            let w = num as f64 / 100.0;
            let v = |w: f64| 1.0 / (w * (1.0 - w));
            prop_assert!(v(w) >= v(0.5));
        }

        #[test]
        fn beta2_bounds_strict(
            sizes in proptest::collection::vec(2u64..40, 3..9), rho in 0.001f64..0.99,
        ) {
            let sizes: Vec<u64> = sizes.into_iter().map(|m| 2 * m).collect();
            let n = sizes.len();
            let d = validate_design(&DesignDoc { sizes, i1: n / 2, theta: vec![0.5], sigma_eps: 1.3 }).unwrap();
            let v = var_beta2(&d, rho).unwrap();
            prop_assert!(v.lower < v.value && v.value < v.upper);
        }
    }
}
