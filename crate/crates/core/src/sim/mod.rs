//! Monte Carlo verification: data generation under the mixed model,
//! closed-form GLS with a profiled ICC, and operating characteristics.

pub mod dataset;
pub mod gls;
pub mod oc;
pub mod tables;
pub mod tolerance;

pub use dataset::{dropout_dataset, generate_dataset, BaseDraws, ClusterData, Dataset};
pub use gls::{fit_lmm, gls_given_rho, model_var_beta4, FitResult, SufficientStats};
pub use oc::{
    operating_characteristics, psi_auto, OperatingCharacteristics, Scenario, SimulationSettings,
};
pub use tables::{reproduce_table, table_cells, TableCell, TableRecord, DEFAULT_RHOS};
