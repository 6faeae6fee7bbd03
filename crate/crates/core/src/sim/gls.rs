use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Upper end of the ICC search interval.
pub const RHO_MAX: f64 = 0.9999;
const GRID_STEPS: usize = 20;
const GOLDEN_TOL: f64 = 1e-8;

/// Fixed-effect fit of one dataset. `beta_hat` is ordered
/// `(beta1, beta2, beta3[..p], beta4[..p])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub se_beta4: Vec<f64>,
    pub rho_hat: f64,
    pub sigma2_y_hat: f64,
    pub loglik: f64,
    pub converged: bool,
    pub covariance: DMatrix<f64>,
}

impl FitResult {
    pub fn beta4(&self) -> &[f64] {
        let p = self.se_beta4.len();
        &self.beta_hat[2 + p..]
    }

    pub fn cov_beta4(&self) -> DMatrix<f64> {
        let p = self.se_beta4.len();
        self.covariance.view((2 + p, 2 + p), (p, p)).into_owned()
    }
}

struct ClusterStats {
    n: f64,
    /// `Z'1`
    z1: DVector<f64>,
    /// `1'Y`
    y1: f64,
}

/// ICC-free sufficient statistics. Each cluster's design rows take only
/// `p + 1` distinct values, one per subgroup label.
pub struct SufficientStats {
    k: usize,
    p: usize,
    n_total: f64,
    ztz: DMatrix<f64>,
    zty: DVector<f64>,
    yy: f64,
    clusters: Vec<ClusterStats>,
}

fn design_row(p: usize, w: f64, label: usize) -> DVector<f64> {
    let mut z = DVector::zeros(2 + 2 * p);
    z[0] = 1.0;
    z[1] = w;
    if label > 0 {
        z[1 + label] = 1.0;
        z[1 + p + label] = w;
    }
    z
}

impl SufficientStats {
    pub fn new(data: &Dataset) -> Self {
        let p = data.p;
        let k = 2 + 2 * p;
        let mut ztz = DMatrix::zeros(k, k);
        let mut zty = DVector::zeros(k);
        let mut yy = 0.0;
        let mut n_total = 0.0;
        let mut clusters = Vec::with_capacity(data.clusters.len());
        for c in &data.clusters {
            let w = f64::from(c.arm);
            let mut counts = vec![0.0; p + 1];
            let mut sums = vec![0.0; p + 1];
            for (&l, &y) in c.labels.iter().zip(&c.y) {
                counts[l as usize] += 1.0;
                sums[l as usize] += y;
                yy += y * y;
            }
            let mut z1 = DVector::zeros(k);
            for l in 0..=p {
                let z = design_row(p, w, l);
                ztz.ger(counts[l], &z, &z, 1.0);
                zty.axpy(sums[l], &z, 1.0);
                z1.axpy(counts[l], &z, 1.0);
            }
            let n = c.size() as f64;
            n_total += n;
            clusters.push(ClusterStats {
                n,
                z1,
                y1: sums.iter().sum(),
            });
        }
        Self {
            k,
            p,
            n_total,
            ztz,
            zty,
            yy,
            clusters,
        }
    }

    pub fn total(&self) -> f64 {
        self.n_total
    }

    /// `sum_i Z_i' R_i(rho)^-1 Z_i` with unit residual scale.
    pub fn information(&self, rho: f64) -> DMatrix<f64> {
        let mut info = self.ztz.clone();
        for c in &self.clusters {
            let d = rho / (1.0 - rho + c.n * rho);
            info.ger(-d, &c.z1, &c.z1, 1.0);
        }
        info / (1.0 - rho)
    }

    fn score(&self, rho: f64) -> DVector<f64> {
        let mut s = self.zty.clone();
        for c in &self.clusters {
            let d = rho / (1.0 - rho + c.n * rho);
            s.axpy(-d * c.y1, &c.z1, 1.0);
        }
        s / (1.0 - rho)
    }

    fn y_r_y(&self, rho: f64) -> f64 {
        let mut q = self.yy;
        for c in &self.clusters {
            q -= rho / (1.0 - rho + c.n * rho) * c.y1 * c.y1;
        }
        q / (1.0 - rho)
    }

    fn log_det_r(&self, rho: f64) -> f64 {
        self.clusters
            .iter()
            .map(|c| (c.n - 1.0) * (1.0 - rho).ln() + (1.0 - rho + c.n * rho).ln())
            .sum()
    }

    /// GLS at a fixed ICC with the ML residual scale.
    pub fn gls(&self, rho: f64) -> Result<FitResult> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho = {rho} outside [0, 1)")));
        }
        let info = self.information(rho);
        let chol = info.cholesky().ok_or(Error::SingularInformation)?;
        let score = self.score(rho);
        let beta = chol.solve(&score);
        let resid = (self.y_r_y(rho) - beta.dot(&score)).max(0.0);
        let sigma2 = resid / self.n_total;
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::SingularInformation);
        }
        let loglik = -0.5 * self.n_total * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
            - 0.5 * self.log_det_r(rho);
        let covariance = chol.inverse() * sigma2;
        let se_beta4 = (0..self.p)
            .map(|l| covariance[(2 + self.p + l, 2 + self.p + l)].sqrt())
            .collect();
        debug_assert_eq!(covariance.nrows(), self.k);
        Ok(FitResult {
            beta_hat: beta.iter().copied().collect(),
            se_beta4,
            rho_hat: rho,
            sigma2_y_hat: sigma2,
            loglik,
            converged: true,
            covariance,
        })
    }

    /// Profile-likelihood fit over `rho` in `[0, RHO_MAX]`: coarse grid,
    /// then golden section around the best grid point.
    pub fn fit(&self) -> Result<FitResult> {
        let grid: Vec<f64> = (0..=GRID_STEPS)
            .map(|j| (j as f64 / GRID_STEPS as f64).min(RHO_MAX))
            .collect();
        let mut fits = Vec::with_capacity(grid.len());
        for &r in &grid {
            fits.push(self.gls(r)?);
        }
        let (j, _) = fits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, f)| {
                if f.loglik > acc.1 {
                    (j, f.loglik)
                } else {
                    acc
                }
            });
        let lo = grid[j.saturating_sub(1)];
        let hi = grid[(j + 1).min(grid.len() - 1)];
        let mut best = fits.swap_remove(j);
        let interior = golden_max(
            |r| self.gls(r).map(|f| f.loglik).unwrap_or(f64::NEG_INFINITY),
            lo,
            hi,
        );
        let candidate = self.gls(interior)?;
        if candidate.loglik >= best.loglik {
            best = candidate;
        }
        best.converged =
            best.rho_hat > GOLDEN_TOL.sqrt() && best.rho_hat < RHO_MAX - GOLDEN_TOL.sqrt();
        Ok(best)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// GLS at a given ICC without profiling.
pub fn gls_given_rho(data: &Dataset, rho: f64) -> Result<FitResult> {
    SufficientStats::new(data).gls(rho)
}

/// Maximum-likelihood fit of the random-intercept model.
pub fn fit_lmm(data: &Dataset) -> Result<FitResult> {
    SufficientStats::new(data).fit()
}

/// `beta4` block of the inverse information at `rho`, times `sigma2`.
pub fn model_var_beta4(data: &Dataset, rho: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    let stats = SufficientStats::new(data);
    let inv = stats
        .information(rho)
        .try_inverse()
        .ok_or(Error::SingularInformation)?;
    let p = data.p;
    Ok(inv.view((2 + p, 2 + p), (p, p)).into_owned() * sigma2)
}
