//! Sharp regression-discontinuity estimation with covariate adjustment,
//! subgroup heterogeneity and robust bias-corrected inference.

pub mod bandwidth;
pub mod error;
pub mod heterogeneity;
pub mod inference;
pub mod ingest;
pub mod kernels;
pub mod local_fit;
pub mod rdplot;
pub mod replicate;
pub mod simulate;
pub mod wls;

pub use bandwidth::{select_bandwidth, BandwidthReport};
pub use error::{ErrorClass, RdError, Result};
pub use heterogeneity::{estimate_hte, estimate_hte_with_covariates, BandwidthMode, HteResult};
pub use inference::{estimate_rd, InferenceConfig, RdEstimate};
pub use ingest::{load_table, ColumnMap, Dataset, LoadOptions, TreatedSide};
pub use kernels::Kernel;
pub use local_fit::FitSpec;
pub use wls::Vce;
pub use rdplot::{build_rdplot, BinChoice, BinnedSeries, PlotOptions};
pub use simulate::{run_simulation, SimulationConfig, SimulationReport};
