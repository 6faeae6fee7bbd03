use std::path::Path;

use anyhow::{Context, Result};
use crt_hte_core::{
    validate_design, validate_dropout_design, ClusterSizes, DesignDoc, TrialDesign,
};
use serde::{Deserialize, Serialize};

/// A design document with an optional label and ICC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sizes: Vec<u64>,
    pub i1: usize,
    pub theta: Vec<f64>,
    pub sigma_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn doc(&self) -> DesignDoc {
        DesignDoc {
            sizes: self.sizes.clone(),
            i1: self.i1,
            theta: self.theta.clone(),
            sigma_eps: self.sigma_eps,
        }
    }

    /// Fixed-prevalence design.
    pub fn design(&self) -> Result<TrialDesign> {
        Ok(validate_design(&self.doc())?)
    }

    /// Design whose subgroup totals, not per-cluster counts, are integral.
    pub fn dropout_design(&self) -> Result<TrialDesign> {
        Ok(validate_dropout_design(&self.doc())?)
    }

    pub fn sizes(&self) -> Result<ClusterSizes> {
        Ok(ClusterSizes::new(self.sizes.clone())?)
    }
}
