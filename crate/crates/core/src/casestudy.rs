//! Power curves and detectable-effect thresholds for three published trial
//! configurations.

use serde::{Deserialize, Serialize};

use crate::design::{ClusterSizes, DesignSummary};
use crate::error::{Error, Result};
use crate::power::{
    epic, min_avg_cluster_size, power_wald_1d, solve_equalizer, DesignSkeleton, EqualizerTarget,
    PowerRequest, Rounding,
};
use crate::randomization::psi_approx;

const ALPHA: f64 = 0.05;
const TARGET_POWER: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    /// 40 clusters of average size 27, one third in the subgroup.
    Recode,
    /// 22 clusters of average size 40, one quarter in the subgroup.
    Partner,
    /// 16 clusters planned at 40 with 25% drop-out, one quarter in the subgroup.
    Epic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Equal cluster sizes; for the drop-out study, the planned design.
    Equal,
    /// All clusters but the last at a small fixed size.
    Extreme,
    /// The drop-out study analysed at its post-drop-out size with no drop-out.
    NoDropout,
    /// Power and size over the subgroup share at fixed effects.
    ThetaSweep,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::Recode, Study::Partner, Study::Epic];

    pub fn name(self) -> &'static str {
        match self {
            Study::Recode => "recode",
            Study::Partner => "partner",
            Study::Epic => "epic",
        }
    }

    pub fn sigma_eps(self) -> f64 {
        match self {
            Study::Recode => 0.49,
            Study::Partner => 0.91,
            Study::Epic => epic::SIGMA_EPS,
        }
    }

    pub fn theta(self) -> f64 {
        match self {
            Study::Recode => 1.0 / 3.0,
            Study::Partner | Study::Epic => 0.25,
        }
    }

    pub fn clusters(self) -> usize {
        match self {
            Study::Recode => 40,
            Study::Partner => 22,
            Study::Epic => epic::CLUSTERS,
        }
    }

    /// Average analysed cluster size.
    pub fn m_bar(self) -> f64 {
        match self {
            Study::Recode => 27.0,
            Study::Partner => 40.0,
            Study::Epic => epic::PLANNED_M_BAR * (1.0 - epic::DROPOUT),
        }
    }

    pub fn variants(self) -> &'static [Variant] {
        match self {
            Study::Recode | Study::Partner => &[Variant::Equal, Variant::Extreme],
            Study::Epic => &[Variant::Equal, Variant::NoDropout, Variant::ThetaSweep],
        }
    }

    /// Cluster sizes of the extreme variant: small fixed clusters and one
    /// large cluster with the same total.
    pub fn extreme_sizes(self) -> Result<ClusterSizes> {
        let (small, fixed) = match self {
            Study::Recode => (3u64, 39usize),
            Study::Partner => (4, 21),
            Study::Epic => return Err(Error::Domain("epic has no extreme variant".into())),
        };
        let total = (self.m_bar() * self.clusters() as f64).round() as u64;
        let mut sizes = vec![small; fixed];
        sizes.push(total - small * fixed as u64);
        ClusterSizes::new(sizes)
    }

    /// Fixed sizes of the extreme variant when solving for the last cluster.
    fn extreme_fixed(self) -> Result<Vec<f64>> {
        let sizes = self.extreme_sizes()?.as_f64();
        Ok(sizes[..sizes.len() - 1].to_vec())
    }

    /// Equal-size sizing rounds up to a multiple that keeps the subgroup
    /// count integral.
    pub fn size_multiple(self) -> u64 {
        (1.0 / self.theta()).round() as u64
    }

    /// Effect grid of the published curves.
    pub fn default_deltas(self) -> Vec<f64> {
        let (lo, hi, step) = match self {
            Study::Recode => (0.05, 0.5, 0.005),
            Study::Partner => (0.1, 1.0, 0.01),
            Study::Epic => (1.0, 15.0, 0.1),
        };
        grid(lo, hi, step)
    }

    /// Precision at which detectable thresholds are reported.
    pub fn resolution(self) -> f64 {
        match self {
            Study::Recode | Study::Partner => 0.001,
            Study::Epic => 0.01,
        }
    }

    fn check(self, variant: Variant) -> Result<()> {
        if self.variants().contains(&variant) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{} has no {variant:?} variant",
                self.name()
            )))
        }
    }

    fn summary(self) -> Result<DesignSummary> {
        DesignSummary::new(
            self.clusters(),
            self.m_bar(),
            vec![self.theta()],
            self.sigma_eps(),
        )
    }

    /// Inflation factor of the variant's cluster sizes.
    pub fn psi(self, variant: Variant) -> Result<f64> {
        self.check(variant)?;
        match variant {
            Variant::Extreme => {
                let m = self.extreme_sizes()?;
                Ok(psi_approx(&m, m.len() / 2)?.value)
            }
            _ => Ok(4.0),
        }
    }

    /// Power at effect `delta` and the study's analysed sizes.
    pub fn power(self, variant: Variant, delta: f64) -> Result<f64> {
        self.check(variant)?;
        match (self, variant) {
            (Study::Epic, Variant::Equal) => epic::preset_power(self.theta(), delta),
            (Study::Epic, Variant::NoDropout) => epic::no_dropout_power(delta),
            (Study::Epic, Variant::ThetaSweep) => Err(Error::Domain(
                "theta-sweep has no single power curve; use theta_sweep".into(),
            )),
            _ => power_wald_1d(delta, &self.summary()?, self.psi(variant)?, ALPHA),
        }
    }

    /// Average cluster size reaching 80% power at `delta`.
    pub fn required_size(self, variant: Variant, delta: f64) -> Result<RequiredSize> {
        self.check(variant)?;
        let req = PowerRequest::new(vec![delta], ALPHA, TARGET_POWER)?;
        match (self, variant) {
            (Study::Epic, Variant::Equal) => Ok(RequiredSize {
                m_bar: epic::preset_size(self.theta(), delta)?,
                rounded: None,
            }),
            (Study::Epic, _) => Ok(RequiredSize {
                m_bar: epic::no_dropout_size(self.theta(), delta)?,
                rounded: None,
            }),
            (_, Variant::Equal) => {
                let skel = DesignSkeleton {
                    clusters: self.clusters(),
                    theta: self.theta(),
                    sigma_eps: self.sigma_eps(),
                };
                let sol =
                    min_avg_cluster_size(&req, &skel, 4.0, Rounding::up(self.size_multiple()))?;
                Ok(RequiredSize {
                    m_bar: sol.raw,
                    rounded: Some(sol.rounded),
                })
            }
            _ => {
                let target = EqualizerTarget::LargestCluster {
                    fixed: self.extreme_fixed()?,
                };
                let sol = solve_equalizer(&target, self.theta(), self.sigma_eps(), &req)?;
                Ok(RequiredSize {
                    m_bar: sol.m_bar,
                    rounded: Some(sol.rounded),
                })
            }
        }
    }

    /// Smallest effect reaching 80% power at the analysed sizes.
    pub fn threshold(self, variant: Variant) -> Result<Threshold> {
        let gap = |d: f64| self.power(variant, d).map(|p| p - TARGET_POWER);
        let (mut lo, mut hi) = (0.0, self.sigma_eps());
        while gap(hi)? < 0.0 {
            hi *= 2.0;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if gap(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let res = self.resolution();
        // smallest grid point at or above the exact root
        let mut reported = (hi / res - 1e-9).ceil() * res;
        if gap(reported)? < 0.0 {
            reported += res;
        }
        Ok(Threshold {
            exact: hi,
            reported,
            resolution: res,
        })
    }

    /// Power and required size over the default effect grid.
    pub fn curve(self, variant: Variant, deltas: &[f64]) -> Result<Vec<CurvePoint>> {
        deltas
            .iter()
            .map(|&delta| {
                let required = match self.required_size(variant, delta) {
                    Ok(r) => Some(r),
                    Err(Error::NoRootInBracket { .. }) => None,
                    Err(e) => return Err(e),
                };
                Ok(CurvePoint {
                    delta,
                    power: self.power(variant, delta)?,
                    required,
                })
            })
            .collect()
    }
}

/// Drop-out study power and planned size over subgroup shares `0.01..=0.99`
/// at effects `2.5, 5, 7.5, 10`.
pub fn theta_sweep() -> Result<Vec<ThetaPoint>> {
    let mut out = Vec::new();
    for delta in [2.5, 5.0, 7.5, 10.0] {
        for theta in grid(0.01, 0.99, 0.01) {
            out.push(ThetaPoint {
                theta,
                delta,
                power: epic::preset_power(theta, delta)?,
                required_m_bar: epic::preset_size(theta, delta)?,
            });
        }
    }
    Ok(out)
}

/// `lo, lo + step, ..., hi` without accumulated rounding.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredSize {
    /// Real-valued solution.
    pub m_bar: f64,
    /// Rounded size: a multiple for equal sizes, the largest cluster otherwise.
    pub rounded: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub power: f64,
    /// `None` when the study's sizes already exceed what the effect needs.
    pub required: Option<RequiredSize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta: f64,
    pub delta: f64,
    pub power: f64,
    pub required_m_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub exact: f64,
    /// `exact` rounded up to `resolution`.
    pub reported: f64,
    pub resolution: f64,
}
