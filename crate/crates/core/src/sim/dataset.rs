use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{ModelParams, TrialDesign, INTEGRALITY_TOL};
use crate::error::{Error, Result};
use crate::power::DropoutSpec;
use crate::randomization::{draw_assignment, Assignment};
use crate::rng::stream_rng;

/// One cluster of a simulated trial. `labels[j]` is 0 for the reference
/// subgroup and `l` for subgroup `l` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterData {
    pub arm: bool,
    pub labels: Vec<u8>,
    pub y: Vec<f64>,
}

impl ClusterData {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Binary `m_i x p` subgroup indicator matrix.
    pub fn x_matrix(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.size(), p, |j, l| {
            f64::from(self.labels[j] as usize == l + 1)
        })
    }

    /// Head count of each subgroup `1..=p`.
    pub fn subgroup_counts(&self, p: usize) -> Vec<usize> {
        let mut c = vec![0; p];
        for &l in &self.labels {
            if l > 0 {
                c[l as usize - 1] += 1;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub p: usize,
    pub clusters: Vec<ClusterData>,
}

impl Dataset {
    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.size()).sum()
    }

    pub fn treated_clusters(&self) -> usize {
        self.clusters.iter().filter(|c| c.arm).count()
    }
}

/// Every random quantity of one replicate, independent of the model
/// parameters: realizing it under different ICCs gives common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDraws {
    p: usize,
    assignment: Assignment,
    labels: Vec<Vec<u8>>,
    z_gamma: Vec<f64>,
    eps: Vec<Vec<f64>>,
}

fn shuffled_labels<R: Rng + ?Sized>(rng: &mut R, counts: &[u64], size: u64) -> Vec<u8> {
    let mut labels = Vec::with_capacity(size as usize);
    for (l, &c) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(l as u8 + 1, c as usize));
    }
    labels.resize(size as usize, 0);
    labels.shuffle(rng);
    labels
}

/// Multinomial split of `n` items with probabilities proportional to `weights`,
/// by sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, weights: &[u64]) -> Vec<u64> {
    let mut left = n;
    let mut mass: u64 = weights.iter().sum();
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        let x = if left == 0 || w == 0 {
            0
        } else if w >= mass {
            left
        } else {
            Binomial::new(left, w as f64 / mass as f64)
                .expect("probability in [0, 1]")
                .sample(rng)
        };
        out.push(x);
        left -= x;
        mass -= w;
    }
    out
}

impl BaseDraws {
    /// Draws for a design with fixed subgroup counts in every cluster.
    pub fn fixed_prevalence<R: Rng + ?Sized>(design: &TrialDesign, rng: &mut R) -> Result<Self> {
        if !design.has_fixed_prevalence() {
            return Err(Error::Domain(
                "design lacks integral per-cluster subgroup counts".into(),
            ));
        }
        let n = design.num_clusters();
        let assignment = draw_assignment(rng, n, design.i1());
        let mut labels = Vec::with_capacity(n);
        let mut z_gamma = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for (i, &m) in design.clusters().as_slice().iter().enumerate() {
            labels.push(shuffled_labels(rng, &design.subgroup_counts(i), m));
            z_gamma.push(rng.sample(StandardNormal));
            eps.push((0..m).map(|_| rng.sample(StandardNormal)).collect());
        }
        Ok(Self {
            p: design.p(),
            assignment,
            labels,
            z_gamma,
            eps,
        })
    }

    /// Draws after drop-out: survivors of the target subgroup are
    /// hypergeometric, then both subgroups are spread multinomially over
    /// clusters in proportion to planned sizes.
    pub fn dropout<R: Rng + ?Sized>(
        design: &TrialDesign,
        drop: &DropoutSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if design.p() != 1 {
            return Err(Error::NotUnivariate(design.p()));
        }
        let sizes = design.clusters().as_slice();
        let total = design.clusters().total();
        let kept = total as f64 * (1.0 - drop.rate());
        if (kept - kept.round()).abs() > INTEGRALITY_TOL * total as f64 {
            return Err(Error::Domain(format!(
                "{total} planned participants at drop-out rate {} leave a non-integer {kept}",
                drop.rate()
            )));
        }
        let kept = kept.round() as u64;
        let target = design.subgroup_totals()[0];
        let n = sizes.len();
        let assignment = draw_assignment(rng, n, design.i1());
        let k = Hypergeometric::new(total, target, kept)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng);
        let m_target = multinomial(rng, k, sizes);
        let m_ref = multinomial(rng, kept - k, sizes);
        let mut labels = Vec::with_capacity(n);
        let mut z_gamma = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for i in 0..n {
            let size = m_target[i] + m_ref[i];
            labels.push(shuffled_labels(rng, &[m_target[i]], size));
            z_gamma.push(rng.sample(StandardNormal));
            eps.push((0..size).map(|_| rng.sample(StandardNormal)).collect());
        }
        Ok(Self {
            p: 1,
            assignment,
            labels,
            z_gamma,
            eps,
        })
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    /// Outcomes `beta1 + beta2 w + x'(beta3 + beta4 w) + gamma + eps`.
    pub fn realize(&self, params: &ModelParams, sigma_eps: f64) -> Dataset {
        let sigma_gamma = params.sigma2_gamma(sigma_eps).sqrt();
        let clusters = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, labels)| {
                let arm = self.assignment.as_slice()[i];
                let w = f64::from(arm);
                let base = params.beta1 + params.beta2 * w + sigma_gamma * self.z_gamma[i];
                let y = labels
                    .iter()
                    .zip(&self.eps[i])
                    .map(|(&l, &e)| {
                        let sub = if l == 0 {
                            0.0
                        } else {
                            let l = l as usize - 1;
                            params.beta3[l] + params.beta4[l] * w
                        };
                        base + sub + sigma_eps * e
                    })
                    .collect();
                ClusterData {
                    arm,
                    labels: labels.clone(),
                    y,
                }
            })
            .collect();
        Dataset {
            p: self.p,
            clusters,
        }
    }
}

fn check_params(design: &TrialDesign, params: &ModelParams) -> Result<()> {
    if params.p() != design.p() || params.beta3.len() != design.p() {
        return Err(Error::DimensionMismatch {
            expected: design.p(),
            found: params.p(),
        });
    }
    Ok(())
}

/// A dataset with exactly `m_i theta_l` members of subgroup `l` in cluster `i`.
pub fn generate_dataset(design: &TrialDesign, params: &ModelParams, seed: u64) -> Result<Dataset> {
    check_params(design, params)?;
    let draws = BaseDraws::fixed_prevalence(design, &mut stream_rng(seed, 0))?;
    Ok(draws.realize(params, design.sigma_eps()))
}

/// A dataset after completely-at-random drop-out.
pub fn dropout_dataset(
    design: &TrialDesign,
    params: &ModelParams,
    drop: &DropoutSpec,
    seed: u64,
) -> Result<Dataset> {
    check_params(design, params)?;
    let draws = BaseDraws::dropout(design, drop, &mut stream_rng(seed, 0))?;
    Ok(draws.realize(params, design.sigma_eps()))
}
