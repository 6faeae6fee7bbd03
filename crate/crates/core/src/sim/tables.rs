use serde::{Deserialize, Serialize};

use super::oc::{operating_characteristics, Scenario, SimulationSettings};
use crate::design::{
    build_simulation_pattern, validate_design, validate_dropout_design, DesignDoc, DesignSummary,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::power::{
    dropout_min_size, power_wald_1d, DesignSkeleton, DropoutBracket, DropoutDesign, DropoutSpec,
    PowerRequest, Rounding,
};
use crate::randomization::psi_approx;
use crate::rng::derive_seed;

pub const DEFAULT_RHOS: [f64; 3] = [0.05, 0.5, 0.95];
const BETA: (f64, f64, f64) = (0.15, 0.25, 0.1);
const DELTAS: [f64; 3] = [0.25, 0.35, 0.45];
const ALPHA: f64 = 0.05;
const TARGET_POWER: f64 = 0.8;

/// One cell of a validation table at one ICC. Simulation fields are `None`
/// when no replicates were requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub table: u8,
    pub q: usize,
    pub theta: f64,
    pub delta: f64,
    pub rate: Option<f64>,
    pub rho: f64,
    pub m_bar: f64,
    pub psi: f64,
    pub cse: f64,
    pub predicted_power: f64,
    pub esd: Option<f64>,
    pub se_bar: Option<f64>,
    pub type1: Option<f64>,
    pub power: Option<f64>,
    pub replicates: u64,
    pub failed: u64,
    pub seed: u64,
}

/// ICC-free part of a table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub table: u8,
    pub q: usize,
    pub theta: f64,
    pub delta: f64,
    pub rate: Option<f64>,
    /// Planned average cluster size; before drop-out for the drop-out table.
    pub m_bar: u64,
    /// Unrounded solution of the sizing equation, when the table solves one.
    pub m_bar_raw: Option<f64>,
    pub psi: f64,
    pub cse: f64,
    pub predicted_power: f64,
}

fn pattern_psi(q: usize) -> Result<f64> {
    Ok(psi_approx(&build_simulation_pattern(q, 2.0)?, 4 * q)?.value)
}

fn cse(psi: f64, q: usize, m_bar: f64, theta: f64) -> f64 {
    (psi / (8.0 * q as f64 * m_bar * theta * (1.0 - theta))).sqrt()
}

fn sized_cell(table: u8, q: usize, theta: f64, delta: f64, multiple: u64) -> Result<TableCell> {
    let psi = pattern_psi(q)?;
    let skel = DesignSkeleton {
        clusters: 8 * q,
        theta,
        sigma_eps: 1.0,
    };
    let req = PowerRequest::scalar(delta)?;
    let sol = crate::power::min_avg_cluster_size(&req, &skel, psi, Rounding::nearest(multiple))?;
    let m = sol.rounded as f64;
    let summary = DesignSummary::new(8 * q, m, vec![theta], 1.0)?;
    Ok(TableCell {
        table,
        q,
        theta,
        delta,
        rate: None,
        m_bar: sol.rounded,
        m_bar_raw: Some(sol.raw),
        psi,
        cse: cse(psi, q, m, theta),
        predicted_power: power_wald_1d(delta, &summary, psi, ALPHA)?,
    })
}

fn dropout_design(rate: f64, psi: f64, bracket: DropoutBracket) -> Result<DropoutDesign> {
    let pattern = build_simulation_pattern(1, 2.0)?;
    Ok(DropoutDesign::from_pattern(
        DropoutSpec::new(rate)?,
        &pattern,
        0.5,
        1.0,
        psi,
        bracket,
    ))
}

/// Analytic cells of table `id`: standard errors over size patterns (1),
/// sizing over subgroup shares (2), over cluster counts (3) and under
/// drop-out (4).
pub fn table_cells(id: u8) -> Result<Vec<TableCell>> {
    let mut cells = Vec::new();
    match id {
        1 => {
            for m_bar in [20u64, 40, 60] {
                for q in 1..=3 {
                    let psi = pattern_psi(q)?;
                    let m = m_bar as f64;
                    let summary = DesignSummary::new(8 * q, m, vec![0.5], 1.0)?;
                    cells.push(TableCell {
                        table: 1,
                        q,
                        theta: 0.5,
                        delta: 0.35,
                        rate: None,
                        m_bar,
                        m_bar_raw: None,
                        psi,
                        cse: cse(psi, q, m, 0.5),
                        predicted_power: power_wald_1d(0.35, &summary, psi, ALPHA)?,
                    });
                }
            }
        }
        2 => {
            for (theta, multiple) in [(0.3, 20), (0.4, 10), (0.5, 4)] {
                for delta in DELTAS {
                    cells.push(sized_cell(2, 1, theta, delta, multiple)?);
                }
            }
        }
        3 => {
            for q in 2..=4 {
                for delta in DELTAS {
                    cells.push(sized_cell(3, q, 0.5, delta, 4)?);
                }
            }
        }
        4 => {
            let psi = pattern_psi(1)?;
            for (rate, multiple) in [(0.2, 10), (0.25, 4), (0.3, 10)] {
                let sizing = dropout_design(rate, psi, DropoutBracket::Reduced)?;
                let predict = dropout_design(rate, psi, DropoutBracket::General)?;
                for delta in DELTAS {
                    let req = PowerRequest::new(vec![delta], ALPHA, TARGET_POWER)?;
                    let sol = dropout_min_size(&sizing, &req, Rounding::nearest(multiple))?;
                    let m = sol.rounded as f64;
                    cells.push(TableCell {
                        table: 4,
                        q: 1,
                        theta: 0.5,
                        delta,
                        rate: Some(rate),
                        m_bar: sol.rounded,
                        m_bar_raw: Some(sol.raw),
                        psi,
                        cse: (psi * predict.bracket(m) / (8.0 * m * (1.0 - rate))).sqrt(),
                        predicted_power: crate::power::dropout_power(&predict, m, delta, ALPHA)?,
                    });
                }
            }
        }
        _ => {
            return Err(Error::Domain(format!(
                "unknown table {id}; expected 1 to 4"
            )))
        }
    }
    Ok(cells)
}

impl TableCell {
    pub fn scenario(&self, rho: f64) -> Result<Scenario> {
        let sizes = build_simulation_pattern(self.q, self.m_bar as f64)?;
        let doc = DesignDoc {
            sizes: sizes.as_slice().to_vec(),
            i1: 4 * self.q,
            theta: vec![self.theta],
            sigma_eps: 1.0,
        };
        let design = match self.rate {
            Some(_) => validate_dropout_design(&doc)?,
            None => validate_design(&doc)?,
        };
        let params = ModelParams::new(BETA.0, BETA.1, vec![BETA.2], vec![self.delta], rho)?;
        let s = Scenario::with_psi(design, params, self.psi)?;
        match self.rate {
            Some(r) => s.with_dropout(DropoutSpec::new(r)?),
            None => Ok(s),
        }
    }

    fn record(&self, rho: f64, seed: u64) -> TableRecord {
        TableRecord {
            table: self.table,
            q: self.q,
            theta: self.theta,
            delta: self.delta,
            rate: self.rate,
            rho,
            m_bar: self.m_bar as f64,
            psi: self.psi,
            cse: self.cse,
            predicted_power: self.predicted_power,
            esd: None,
            se_bar: None,
            type1: None,
            power: None,
            replicates: 0,
            failed: 0,
            seed,
        }
    }
}

/// Records of table `id` for every cell and ICC. Cell `j` simulates with
/// seed `derive_seed(seed, j)` at every ICC, so ICC rows share their draws.
pub fn reproduce_table(
    id: u8,
    settings: &SimulationSettings,
    rhos: &[f64],
) -> Result<Vec<TableRecord>> {
    let cells = table_cells(id)?;
    let mut out = Vec::with_capacity(cells.len() * rhos.len());
    for (j, cell) in cells.iter().enumerate() {
        let seed = derive_seed(settings.seed, j as u64);
        for &rho in rhos {
            let mut rec = cell.record(rho, seed);
            if settings.replicates > 0 {
                let s = SimulationSettings { seed, ..*settings };
                let oc = operating_characteristics(&cell.scenario(rho)?, &s)?;
                rec.esd = Some(oc.esd);
                rec.se_bar = Some(oc.se_bar);
                rec.type1 = Some(oc.type1);
                rec.power = Some(oc.power);
                rec.replicates = oc.replicates;
                rec.failed = oc.failed;
            }
            out.push(rec);
        }
    }
    Ok(out)
}
