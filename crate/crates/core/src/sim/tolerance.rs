//! Agreement criteria between simulated and analytic operating
//! characteristics.

use serde::Serialize;

use super::tables::TableRecord;

pub const ESD_REL_TOL: f64 = 0.05;
pub const SE_BAR_REL_TOL: f64 = 0.03;
pub const POWER_ABS_TOL: f64 = 0.02;
pub const DROPOUT_POWER_ABS_TOL: f64 = 0.025;
/// Two-sided 99% normal quantile.
pub const TYPE1_BAND_Z: f64 = 2.5758293035489004;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub observed: f64,
    pub expected: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl Check {
    fn within(name: &'static str, observed: f64, expected: f64, lower: f64, upper: f64) -> Self {
        Self {
            name,
            observed,
            expected,
            lower,
            upper,
            pass: (lower..=upper).contains(&observed),
        }
    }

    pub fn relative(name: &'static str, observed: f64, expected: f64, tol: f64) -> Self {
        let half = tol * expected.abs();
        Self::within(name, observed, expected, expected - half, expected + half)
    }

    pub fn absolute(name: &'static str, observed: f64, expected: f64, tol: f64) -> Self {
        Self::within(name, observed, expected, expected - tol, expected + tol)
    }

    /// Binomial band around `alpha` for a rejection rate over `n` replicates.
    pub fn type1(observed: f64, alpha: f64, n: u64) -> Self {
        let half = TYPE1_BAND_Z * (alpha * (1.0 - alpha) / n as f64).sqrt();
        Self::within("type1", observed, alpha, alpha - half, alpha + half)
    }
}

/// Checks that apply to a simulated table record; empty without simulation.
pub fn check_record(rec: &TableRecord, alpha: f64) -> Vec<Check> {
    let n = rec.replicates - rec.failed;
    let mut out = Vec::new();
    if rec.table == 1 {
        if let Some(esd) = rec.esd {
            out.push(Check::relative("esd", esd, rec.cse, ESD_REL_TOL));
        }
        if let Some(se) = rec.se_bar {
            out.push(Check::relative("se_bar", se, rec.cse, SE_BAR_REL_TOL));
        }
        return out;
    }
    let tol = if rec.rate.is_some() {
        DROPOUT_POWER_ABS_TOL
    } else {
        POWER_ABS_TOL
    };
    if let Some(p) = rec.power {
        out.push(Check::absolute("power", p, rec.predicted_power, tol));
    }
    if let Some(t) = rec.type1 {
        out.push(Check::type1(t, alpha, n));
    }
    out
}
