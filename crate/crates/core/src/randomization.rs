//! The random allocation rule and the randomization inflation factor
//! `psi = E[1 / (wbar (1 - wbar))]`, where `wbar` is the size-weighted share of
//! participants in the intervention arm.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::ClusterSizes;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::sum::{self, CompensatedSum};

/// Largest number of assignments [`psi_exact`] will enumerate by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Arm indicators, one per cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment(Vec<bool>);

impl Assignment {
    pub fn new(w: Vec<bool>) -> Self {
        Self(w)
    }

    pub fn from_indicators(w: &[u8]) -> Self {
        Self(w.iter().map(|&x| x != 0).collect())
    }

    /// Assignment treating exactly the clusters in `treated`.
    pub fn from_treated(n: usize, treated: &[usize]) -> Self {
        let mut w = vec![false; n];
        for &i in treated {
            w[i] = true;
        }
        Self(w)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.0.iter().filter(|&&x| x).count()
    }

    pub fn is_degenerate(&self) -> bool {
        let t = self.treated_count();
        t == 0 || t == self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiMethod {
    Exact,
    Series,
    Sampled,
}

/// Kurtosis reading used by the moment formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KurtosisConvention {
    /// `mean((m - m_bar)^4) / mean((m - m_bar)^2)^2`.
    #[default]
    Standard,
    /// Numerator with `-3 m_bar^4` in place of `-3 I m_bar^4`; kept for comparison.
    AsPrinted,
}

/// Value of `psi` with the method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub value: f64,
    pub method: PsiMethod,
    pub cv2: f64,
    /// `None` when all clusters have the same size.
    pub kurtosis: Option<f64>,
    pub assignments_evaluated: u64,
    /// Monte Carlo standard error; only for sampled estimates.
    pub std_error: Option<f64>,
}

/// Size dispersion summaries and the exact moments of `wbar` they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeMoments {
    pub cv2: f64,
    /// `None` when all clusters have the same size.
    pub kurt: Option<f64>,
    pub var_wbar: f64,
    pub m4_wbar: f64,
}

/// Central moments of the sizes, relative to the mean: `(mu2 / m^2, mu4 / m^4)`.
fn relative_moments(m: &[f64], convention: KurtosisConvention) -> (f64, f64) {
    let n = m.len() as f64;
    let mean = sum::sum(m.iter().copied()) / n;
    let mu2 = sum::sum(m.iter().map(|x| (x - mean).powi(2))) / n;
    let mu4 = sum::sum(m.iter().map(|x| (x - mean).powi(4))) / n;
    let mu4 = match convention {
        KurtosisConvention::Standard => mu4,
        KurtosisConvention::AsPrinted => mu4 + 3.0 * mean.powi(4) * (n - 1.0) / n,
    };
    (mu2 / (mean * mean), mu4 / mean.powi(4))
}

fn kurtosis_of(cv2: f64, kurt_cv4: f64) -> Option<f64> {
    (cv2 > 0.0).then(|| kurt_cv4 / (cv2 * cv2))
}

fn check_arms(n: usize, i1: usize) -> Result<()> {
    if i1 == 0 || i1 >= n {
        return Err(Error::ArmCountOutOfRange { i1, clusters: n });
    }
    Ok(())
}

pub fn size_moments(m: &ClusterSizes, i1: usize) -> Result<SizeMoments> {
    size_moments_with(m, i1, KurtosisConvention::Standard)
}

/// Dispersion of the sizes and the variance and fourth central moment of
/// `wbar` under the random allocation rule. Needs at least four clusters.
pub fn size_moments_with(
    m: &ClusterSizes,
    i1: usize,
    convention: KurtosisConvention,
) -> Result<SizeMoments> {
    let n = m.len();
    check_arms(n, i1)?;
    if n < 4 {
        return Err(Error::TooFewClusters {
            needed: 4,
            found: n,
        });
    }
    let (cv2, kurt_cv4) = relative_moments(&m.as_f64(), convention);
    let (ni, n1, n0) = (n as f64, i1 as f64, (n - i1) as f64);
    let var_wbar = n1 * n0 * cv2 / (ni * ni * (ni - 1.0));
    let m4_wbar = ((ni * ni - 6.0 * n0 * n1 + ni) / ni * kurt_cv4
        + 3.0 * (n1 - 1.0) * (n0 - 1.0) * cv2 * cv2)
        * n1
        * n0
        / (ni.powi(3) * (ni - 1.0) * (ni - 2.0) * (ni - 3.0));
    Ok(SizeMoments {
        cv2,
        kurt: kurtosis_of(cv2, kurt_cv4),
        var_wbar,
        m4_wbar,
    })
}

/// Size-weighted intervention share `m'w / m'1`.
pub fn wbar(m: &ClusterSizes, w: &Assignment) -> Result<f64> {
    weighted_share(&m.as_f64(), w)
}

/// Intervention share with weights `m_i / (1 - rho + m_i rho)`.
pub fn wbar_rho(m: &ClusterSizes, w: &Assignment, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    weighted_share(&rho_weights(m, rho), w)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1)")));
    }
    Ok(())
}

fn rho_weights(m: &ClusterSizes, rho: f64) -> Vec<f64> {
    m.as_f64()
        .iter()
        .map(|&mi| mi / (1.0 - rho + mi * rho))
        .collect()
}

fn weighted_share(a: &[f64], w: &Assignment) -> Result<f64> {
    if a.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: w.len(),
        });
    }
    if w.is_degenerate() {
        return Err(Error::DegenerateAssignment);
    }
    let total = sum::sum(a.iter().copied());
    let treated = sum::sum(
        a.iter()
            .zip(w.as_slice())
            .filter(|(_, &t)| t)
            .map(|(x, _)| *x),
    );
    Ok(treated / total)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for j in 0..k {
        match c.checked_mul((n - j) as u128) {
            Some(v) => c = v / (j as u128 + 1),
            None => return u128::MAX,
        }
    }
    c
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn enumerate_inflation(weights: &[f64], i1: usize, cap: u64) -> Result<(f64, u64)> {
    let n = weights.len();
    check_arms(n, i1)?;
    let count = binomial(n, i1);
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let total = sum::sum(weights.iter().copied());
    let mut acc = CompensatedSum::default();
    for_each_combination(n, i1, |idx| {
        let s = sum::sum(idx.iter().map(|&i| weights[i]));
        acc.add(total * total / (s * (total - s)));
    });
    Ok((acc.value() / count as f64, count as u64))
}

/// Exact `psi` by enumerating all `C(I, i1)` assignments.
pub fn psi_exact(m: &ClusterSizes, i1: usize) -> Result<PsiEstimate> {
    psi_exact_with_cap(m, i1, DEFAULT_ENUMERATION_CAP)
}

pub fn psi_exact_with_cap(m: &ClusterSizes, i1: usize, cap: u64) -> Result<PsiEstimate> {
    let (value, evaluated) = enumerate_inflation(&m.as_f64(), i1, cap)?;
    let (cv2, kurt_cv4) = relative_moments(&m.as_f64(), KurtosisConvention::Standard);
    Ok(PsiEstimate {
        value,
        method: PsiMethod::Exact,
        cv2,
        kurtosis: kurtosis_of(cv2, kurt_cv4),
        assignments_evaluated: evaluated,
        std_error: None,
    })
}

/// Series approximation of `psi` truncated after the fourth-moment term.
/// Requires equal arms and at least four clusters.
pub fn psi_approx(m: &ClusterSizes, i1: usize) -> Result<PsiEstimate> {
    psi_approx_with(m, i1, KurtosisConvention::Standard)
}

pub fn psi_approx_with(
    m: &ClusterSizes,
    i1: usize,
    convention: KurtosisConvention,
) -> Result<PsiEstimate> {
    let n = m.len();
    if 2 * i1 != n {
        return Err(Error::UnequalArms { i1, clusters: n });
    }
    let (value, cv2, kurt_cv4) = series(&m.as_f64(), convention)?;
    Ok(PsiEstimate {
        value,
        method: PsiMethod::Series,
        cv2,
        kurtosis: kurtosis_of(cv2, kurt_cv4),
        assignments_evaluated: 0,
        std_error: None,
    })
}

/// The series approximation for real-valued sizes with equal arms.
pub fn psi_series_real(sizes: &[f64]) -> Result<f64> {
    if !sizes.len().is_multiple_of(2) {
        return Err(Error::UnequalArms {
            i1: sizes.len() / 2,
            clusters: sizes.len(),
        });
    }
    if sizes.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain("cluster sizes must be positive".into()));
    }
    Ok(series(sizes, KurtosisConvention::Standard)?.0)
}

fn series(m: &[f64], convention: KurtosisConvention) -> Result<(f64, f64, f64)> {
    let n = m.len();
    if n < 4 {
        return Err(Error::TooFewClusters {
            needed: 4,
            found: n,
        });
    }
    let ni = n as f64;
    let (cv2, kurt_cv4) = relative_moments(m, convention);
    let value = 4.0
        * (1.0
            + cv2 / (ni - 1.0)
            + (3.0 * (ni - 2.0) * cv2 * cv2 - 2.0 * kurt_cv4) / (ni * (ni - 1.0) * (ni - 3.0)));
    Ok((value, cv2, kurt_cv4))
}

pub(crate) fn draw_assignment<R: Rng + ?Sized>(rng: &mut R, n: usize, i1: usize) -> Assignment {
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..i1 {
        let k = rng.random_range(j..n);
        idx.swap(j, k);
    }
    Assignment::from_treated(n, &idx[..i1])
}

/// One assignment drawn uniformly from those treating exactly `i1` clusters.
pub fn sample_allocation(m: &ClusterSizes, i1: usize, seed: u64) -> Result<Assignment> {
    check_arms(m.len(), i1)?;
    Ok(draw_assignment(&mut stream_rng(seed, 0), m.len(), i1))
}

/// Monte Carlo estimate of `psi`; replicate `k` uses stream `k` of `seed`.
pub fn psi_sampled(m: &ClusterSizes, i1: usize, replicates: u64, seed: u64) -> Result<PsiEstimate> {
    let n = m.len();
    check_arms(n, i1)?;
    if replicates == 0 {
        return Err(Error::Domain("need at least one replicate".into()));
    }
    let sizes = m.as_f64();
    let total = sum::sum(sizes.iter().copied());
    let draws: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let w = draw_assignment(&mut stream_rng(seed, k), n, i1);
            let s = sum::sum(
                sizes
                    .iter()
                    .zip(w.as_slice())
                    .filter(|(_, &t)| t)
                    .map(|(x, _)| *x),
            );
            total * total / (s * (total - s))
        })
        .collect();
    let r = replicates as f64;
    let mean = sum::sum(draws.iter().copied()) / r;
    let std_error = if replicates > 1 {
        let ss = sum::sum(draws.iter().map(|x| (x - mean).powi(2)));
        (ss / (r - 1.0) / r).sqrt()
    } else {
        f64::NAN
    };
    let (cv2, kurt_cv4) = relative_moments(&sizes, KurtosisConvention::Standard);
    Ok(PsiEstimate {
        value: mean,
        method: PsiMethod::Sampled,
        cv2,
        kurtosis: kurtosis_of(cv2, kurt_cv4),
        assignments_evaluated: replicates,
        std_error: Some(std_error),
    })
}

/// Exact expectation of `1 / (wbar(rho) (1 - wbar(rho)))` over all assignments.
pub fn psi_rho(m: &ClusterSizes, i1: usize, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(enumerate_inflation(&rho_weights(m, rho), i1, DEFAULT_ENUMERATION_CAP)?.0)
}
