use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::BaseDraws;
use super::gls::{fit_lmm, FitResult};
use crate::design::{ModelParams, TrialDesign};
use crate::dist::{chisq_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::power::{dropout_power, power_chisq, DropoutBracket, DropoutDesign, DropoutSpec};
use crate::randomization::{psi_approx, psi_exact, psi_sampled, PsiEstimate};
use crate::rng::stream_rng;

/// Fewest replicates accepted by the simulation driver.
pub const MIN_REPLICATES: u64 = 100;
const PSI_SAMPLED_REPLICATES: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub replicates: u64,
    pub alpha: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
}

impl SimulationSettings {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self {
            replicates,
            alpha: 0.05,
            seed,
            threads: None,
        }
    }
}

/// Simulated trial: a design, true parameters and an optional drop-out step.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub design: TrialDesign,
    pub params: ModelParams,
    pub dropout: Option<DropoutSpec>,
    /// Inflation factor used for the predicted power.
    pub psi: f64,
}

impl Scenario {
    pub fn new(design: TrialDesign, params: ModelParams) -> Result<Self> {
        let psi = psi_auto(&design)?.value;
        Self::with_psi(design, params, psi)
    }

    pub fn with_psi(design: TrialDesign, params: ModelParams, psi: f64) -> Result<Self> {
        if params.p() != design.p() {
            return Err(Error::DimensionMismatch {
                expected: design.p(),
                found: params.p(),
            });
        }
        Ok(Self {
            design,
            params,
            dropout: None,
            psi,
        })
    }

    pub fn with_dropout(mut self, drop: DropoutSpec) -> Result<Self> {
        if self.design.p() != 1 {
            return Err(Error::NotUnivariate(self.design.p()));
        }
        self.dropout = Some(drop);
        Ok(self)
    }

    /// Analytic power of the Wald test at the true interaction effect.
    pub fn predicted_power(&self, alpha: f64) -> Result<f64> {
        let summary = self.design.summary();
        match self.dropout {
            None => power_chisq(&self.params.beta4, &summary, self.psi, alpha),
            Some(drop) => {
                let dd = DropoutDesign::from_pattern(
                    drop,
                    self.design.clusters(),
                    summary.theta[0],
                    summary.sigma_eps,
                    self.psi,
                    DropoutBracket::General,
                );
                dropout_power(&dd, summary.m_bar, self.params.beta4[0], alpha)
            }
        }
    }

    fn draws(&self, replicate: u64, seed: u64) -> Result<BaseDraws> {
        let mut rng = stream_rng(seed, replicate);
        match &self.dropout {
            None => BaseDraws::fixed_prevalence(&self.design, &mut rng),
            Some(drop) => BaseDraws::dropout(&self.design, drop, &mut rng),
        }
    }
}

/// Series value for equal arms, otherwise exact enumeration when feasible,
/// otherwise a Monte Carlo estimate.
pub fn psi_auto(design: &TrialDesign) -> Result<PsiEstimate> {
    let m = design.clusters();
    match psi_approx(m, design.i1()) {
        Ok(est) => Ok(est),
        Err(Error::UnequalArms { .. } | Error::TooFewClusters { .. }) => {
            match psi_exact(m, design.i1()) {
                Err(Error::EnumerationTooLarge { .. }) => {
                    psi_sampled(m, design.i1(), PSI_SAMPLED_REPLICATES, 0)
                }
                other => other,
            }
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    /// Empirical SD of the first interaction estimate, `n - 1` denominator.
    pub esd: f64,
    /// Mean model-based SE of the first interaction estimate.
    pub se_bar: f64,
    /// Rejection rate with the interaction effect set to zero.
    pub type1: f64,
    /// Rejection rate at the true interaction effect.
    pub power: f64,
    pub predicted: f64,
    pub replicates: u64,
    /// Replicates whose null or alternative fit failed; excluded above.
    pub failed: u64,
    pub seed: u64,
}

struct Replicate {
    beta4: f64,
    se: f64,
    reject_null: bool,
    reject_alt: bool,
}

fn rejects(fit: &FitResult, crit: f64) -> bool {
    if fit.se_beta4.len() == 1 {
        return (fit.beta4()[0] / fit.se_beta4[0]).abs() > crit;
    }
    let b = DVector::from_column_slice(fit.beta4());
    match fit.cov_beta4().cholesky() {
        Some(ch) => b.dot(&ch.solve(&b)) > crit,
        None => false,
    }
}

/// Simulates `replicates` trials. Replicate `k` draws from stream `k` of the
/// seed, and the null and alternative outcomes share those draws.
pub fn operating_characteristics(
    scenario: &Scenario,
    settings: &SimulationSettings,
) -> Result<OperatingCharacteristics> {
    if settings.replicates < MIN_REPLICATES {
        return Err(Error::Domain(format!(
            "need at least {MIN_REPLICATES} replicates"
        )));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha = {} must lie in (0, 1)",
            settings.alpha
        )));
    }
    let p = scenario.design.p();
    let crit = if p == 1 {
        normal_quantile(1.0 - settings.alpha / 2.0)?
    } else {
        chisq_quantile(1.0 - settings.alpha, p as u32)?
    };
    let null = scenario.params.null();
    let sigma = scenario.design.sigma_eps();
    let run = |k: u64| -> Result<Option<Replicate>> {
        let draws = scenario.draws(k, settings.seed)?;
        let alt = fit_lmm(&draws.realize(&scenario.params, sigma));
        let nul = fit_lmm(&draws.realize(&null, sigma));
        Ok(match (alt, nul) {
            (Ok(a), Ok(n)) => Some(Replicate {
                beta4: a.beta4()[0],
                se: a.se_beta4[0],
                reject_null: rejects(&n, crit),
                reject_alt: rejects(&a, crit),
            }),
            _ => None,
        })
    };
    let collect = || {
        (0..settings.replicates)
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>>>()
    };
    let results = match settings.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Domain(e.to_string()))?
            .install(collect)?,
        None => collect()?,
    };
    let ok: Vec<&Replicate> = results.iter().flatten().collect();
    let n = ok.len();
    if n < 2 {
        return Err(Error::SimulationFailed {
            replicates: settings.replicates,
        });
    }
    let nf = n as f64;
    let mean = ok.iter().map(|r| r.beta4).sum::<f64>() / nf;
    let ss = ok.iter().map(|r| (r.beta4 - mean).powi(2)).sum::<f64>();
    Ok(OperatingCharacteristics {
        esd: (ss / (nf - 1.0)).sqrt(),
        se_bar: ok.iter().map(|r| r.se).sum::<f64>() / nf,
        type1: ok.iter().filter(|r| r.reject_null).count() as f64 / nf,
        power: ok.iter().filter(|r| r.reject_alt).count() as f64 / nf,
        predicted: scenario.predicted_power(settings.alpha)?,
        replicates: settings.replicates,
        failed: settings.replicates - n as u64,
        seed: settings.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_simulation_pattern, validate_design, DesignDoc};

    fn scenario(m_bar: f64, beta4: f64, rho: f64) -> Scenario {
        let m = build_simulation_pattern(1, m_bar).unwrap();
        let d = validate_design(&DesignDoc {
            sizes: m.as_slice().to_vec(),
            i1: 4,
            theta: vec![0.5],
            sigma_eps: 1.0,
        })
        .unwrap();
        Scenario::new(
            d,
            ModelParams::new(0.15, 0.25, vec![0.1], vec![beta4], rho).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn independent_of_thread_count() {
        let s = scenario(20.0, 0.35, 0.5);
        let mut a = SimulationSettings::new(200, 42);
        a.threads = Some(1);
        let mut b = a;
        b.threads = Some(4);
        assert_eq!(
            operating_characteristics(&s, &a).unwrap(),
            operating_characteristics(&s, &b).unwrap()
        );
    }

    #[test]
    fn estimates_invariant_to_icc() {
        let settings = SimulationSettings::new(200, 7);
        let a = operating_characteristics(&scenario(20.0, 0.35, 0.05), &settings).unwrap();
        let b = operating_characteristics(&scenario(20.0, 0.35, 0.95), &settings).unwrap();
        // The estimate is ICC-free; the test statistic uses the fitted ICC.
        assert!((a.esd - b.esd).abs() <= 1e-10 * a.esd);
        assert!((a.power - b.power).abs() <= 0.03);
    }

    #[test]
    fn rejects_too_few_replicates() {
        assert!(operating_characteristics(
            &scenario(20.0, 0.35, 0.5),
            &SimulationSettings::new(10, 1)
        )
        .is_err());
    }

    #[test]
    fn null_effect_power_equals_size() {
        let oc =
            operating_characteristics(&scenario(20.0, 0.0, 0.5), &SimulationSettings::new(300, 3))
                .unwrap();
        assert_eq!(oc.type1, oc.power);
        assert!((oc.predicted - 0.05).abs() < 1e-12);
    }

    #[test]
    fn psi_auto_falls_back_for_unequal_arms() {
        let d = validate_design(&DesignDoc {
            sizes: vec![10, 20, 30, 40, 50],
            i1: 2,
            theta: vec![0.5],
            sigma_eps: 1.0,
        })
        .unwrap();
        assert_eq!(psi_auto(&d).unwrap().method, crate::PsiMethod::Exact);
        let d = validate_design(&DesignDoc {
            sizes: vec![10, 20, 30, 40],
            i1: 2,
            theta: vec![0.5],
            sigma_eps: 1.0,
        })
        .unwrap();
        assert_eq!(psi_auto(&d).unwrap().method, crate::PsiMethod::Series);
    }
}
