//! Python bindings: `psi`, power and sizing calculators, case-study
//! thresholds and simulation-table reproduction.

use crt_hte_core::casestudy::{Study, Variant};
use crt_hte_core::power::{
    dropout_min_size, dropout_power, min_avg_cluster_size, power_chisq, DesignSkeleton,
    DropoutBracket, DropoutDesign, DropoutSpec, PowerRequest, Rounding,
};
use crt_hte_core::randomization::{psi_approx, psi_exact, psi_sampled};
use crt_hte_core::sim::{reproduce_table, SimulationSettings, TableRecord, DEFAULT_RHOS};
use crt_hte_core::{validate_design, ClusterSizes, DesignDoc, Error, PsiEstimate};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::SimulationFailed { .. }
        | Error::EnumerationTooLarge { .. }
        | Error::NoRootInBracket { .. }
        | Error::NonPositiveDiscriminant(_)
        | Error::SingularInformation => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn cluster_sizes(v: Vec<u64>) -> PyResult<ClusterSizes> {
    ClusterSizes::new(v).map_err(to_py)
}

/// Series when the arms are equal, else exact enumeration.
fn default_psi(m: &ClusterSizes, i1: usize) -> Result<PsiEstimate, Error> {
    match psi_approx(m, i1) {
        Err(Error::UnequalArms { .. } | Error::TooFewClusters { .. }) => psi_exact(m, i1),
        other => other,
    }
}

#[pyclass(get_all, frozen, module = "crt_hte")]
pub struct Psi {
    value: f64,
    method: String,
    cv2: f64,
    kurtosis: Option<f64>,
    std_error: Option<f64>,
}

#[pymethods]
impl Psi {
    fn __repr__(&self) -> String {
        format!("Psi(value={}, method='{}')", self.value, self.method)
    }
}

impl From<PsiEstimate> for Psi {
    fn from(e: PsiEstimate) -> Self {
        Self {
            value: e.value,
            method: format!("{:?}", e.method).to_lowercase(),
            cv2: e.cv2,
            kurtosis: e.kurtosis,
            std_error: e.std_error,
        }
    }
}

/// Randomization inflation factor of cluster sizes with `i1` treated clusters.
#[pyfunction]
#[pyo3(signature = (sizes, i1, method = "exact", samples = 200_000, seed = 0))]
fn psi(sizes: Vec<u64>, i1: usize, method: &str, samples: u64, seed: u64) -> PyResult<Psi> {
    let m = cluster_sizes(sizes)?;
    let est = match method {
        "exact" => psi_exact(&m, i1),
        "series" => psi_approx(&m, i1),
        "sampled" => psi_sampled(&m, i1, samples, seed),
        other => {
            return Err(PyValueError::new_err(format!(
                "method must be exact, series or sampled, got {other}"
            )))
        }
    };
    Ok(est.map_err(to_py)?.into())
}

/// Power of the interaction test for a fixed-prevalence design.
#[pyfunction]
#[pyo3(signature = (sizes, i1, theta, sigma_eps, delta, alpha = 0.05))]
fn power(
    sizes: Vec<u64>,
    i1: usize,
    theta: Vec<f64>,
    sigma_eps: f64,
    delta: Vec<f64>,
    alpha: f64,
) -> PyResult<f64> {
    let doc = DesignDoc {
        sizes,
        i1,
        theta,
        sigma_eps,
    };
    let design = validate_design(&doc).map_err(to_py)?;
    let psi = default_psi(design.clusters(), i1).map_err(to_py)?.value;
    power_chisq(&delta, &design.summary(), psi, alpha).map_err(to_py)
}

/// Average cluster size reaching `target_power`; returns `(raw, rounded)`.
#[pyfunction]
#[pyo3(signature = (clusters, theta, sigma_eps, delta, psi, target_power = 0.8, alpha = 0.05, multiple = 1))]
#[allow(clippy::too_many_arguments)]
fn sample_size(
    clusters: usize,
    theta: f64,
    sigma_eps: f64,
    delta: f64,
    psi: f64,
    target_power: f64,
    alpha: f64,
    multiple: u64,
) -> PyResult<(f64, u64)> {
    let req = PowerRequest::new(vec![delta], alpha, target_power).map_err(to_py)?;
    let skel = DesignSkeleton {
        clusters,
        theta,
        sigma_eps,
    };
    let sol = min_avg_cluster_size(&req, &skel, psi, Rounding::nearest(multiple)).map_err(to_py)?;
    Ok((sol.raw, sol.rounded))
}

fn bracket(name: &str) -> PyResult<DropoutBracket> {
    match name {
        "general" => Ok(DropoutBracket::General),
        "reduced" => Ok(DropoutBracket::Reduced),
        other => Err(PyValueError::new_err(format!(
            "bracket must be general or reduced, got {other}"
        ))),
    }
}

/// Planned average size under drop-out over a relative size pattern;
/// returns `(raw, rounded, predicted power at rounded)`.
#[pyfunction]
#[pyo3(signature = (pattern, theta, sigma_eps, rate, delta, target_power = 0.8, alpha = 0.05, multiple = 1, size_bracket = "reduced", power_bracket = "general"))]
#[allow(clippy::too_many_arguments)]
fn dropout_size(
    pattern: Vec<u64>,
    theta: f64,
    sigma_eps: f64,
    rate: f64,
    delta: f64,
    target_power: f64,
    alpha: f64,
    multiple: u64,
    size_bracket: &str,
    power_bracket: &str,
) -> PyResult<(f64, u64, f64)> {
    let m = cluster_sizes(pattern)?;
    let psi = default_psi(&m, m.len() / 2).map_err(to_py)?.value;
    let spec = DropoutSpec::new(rate).map_err(to_py)?;
    let sizing =
        DropoutDesign::from_pattern(spec, &m, theta, sigma_eps, psi, bracket(size_bracket)?);
    let predict =
        DropoutDesign::from_pattern(spec, &m, theta, sigma_eps, psi, bracket(power_bracket)?);
    let req = PowerRequest::new(vec![delta], alpha, target_power).map_err(to_py)?;
    let sol = dropout_min_size(&sizing, &req, Rounding::nearest(multiple)).map_err(to_py)?;
    let phi = dropout_power(&predict, sol.rounded as f64, delta, alpha).map_err(to_py)?;
    Ok((sol.raw, sol.rounded, phi))
}

/// Smallest effect with 80% power in a published trial configuration;
/// returns `(exact, reported)`.
#[pyfunction]
#[pyo3(signature = (study, variant = "equal"))]
fn threshold(study: &str, variant: &str) -> PyResult<(f64, f64)> {
    let s = match study {
        "recode" => Study::Recode,
        "partner" => Study::Partner,
        "epic" | "dropout" => Study::Epic,
        other => return Err(PyValueError::new_err(format!("unknown study {other}"))),
    };
    let v = match variant {
        "equal" => Variant::Equal,
        "extreme" => Variant::Extreme,
        "nodropout" | "no-dropout" => Variant::NoDropout,
        other => return Err(PyValueError::new_err(format!("unknown variant {other}"))),
    };
    let t = s.threshold(v).map_err(to_py)?;
    Ok((t.exact, t.reported))
}

#[pyclass(get_all, frozen, module = "crt_hte")]
pub struct TableRow {
    table: u8,
    q: usize,
    theta: f64,
    delta: f64,
    rate: Option<f64>,
    rho: f64,
    m_bar: f64,
    psi: f64,
    cse: f64,
    predicted_power: f64,
    esd: Option<f64>,
    se_bar: Option<f64>,
    type1: Option<f64>,
    power: Option<f64>,
    replicates: u64,
    failed: u64,
    seed: u64,
}

#[pymethods]
impl TableRow {
    fn __repr__(&self) -> String {
        format!(
            "TableRow(table={}, theta={}, delta={}, rho={}, m_bar={}, predicted_power={:.4})",
            self.table, self.theta, self.delta, self.rho, self.m_bar, self.predicted_power
        )
    }
}

impl From<TableRecord> for TableRow {
    fn from(r: TableRecord) -> Self {
        Self {
            table: r.table,
            q: r.q,
            theta: r.theta,
            delta: r.delta,
            rate: r.rate,
            rho: r.rho,
            m_bar: r.m_bar,
            psi: r.psi,
            cse: r.cse,
            predicted_power: r.predicted_power,
            esd: r.esd,
            se_bar: r.se_bar,
            type1: r.type1,
            power: r.power,
            replicates: r.replicates,
            failed: r.failed,
            seed: r.seed,
        }
    }
}

/// Rows of validation table 1 to 4; `replicates = 0` skips simulation.
#[pyfunction]
#[pyo3(signature = (table, replicates = 0, seed = 1, rhos = None))]
fn reproduce(
    py: Python<'_>,
    table: u8,
    replicates: u64,
    seed: u64,
    rhos: Option<Vec<f64>>,
) -> PyResult<Vec<TableRow>> {
    let rhos = rhos.unwrap_or_else(|| DEFAULT_RHOS.to_vec());
    let settings = SimulationSettings::new(replicates, seed);
    let rows = py
        .detach(|| reproduce_table(table, &settings, &rhos))
        .map_err(to_py)?;
    Ok(rows.into_iter().map(TableRow::from).collect())
}

#[pymodule]
fn crt_hte(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Psi>()?;
    m.add_class::<TableRow>()?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(power, m)?)?;
    m.add_function(wrap_pyfunction!(sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(dropout_size, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce, m)?)?;
    Ok(())
}
