//! Small area estimation under the Fay-Herriot model.
//!
//! The crate provides:
//!
//! - the area-level model, design-matrix algebra, and the EBLUP
//!   ([`model`]);
//! - the residual log-likelihood of the model variance and the log
//!   adjustment factors that multiply it ([`likelihood`]);
//! - adjusted-REML variance estimators, with existence predicates and
//!   the balanced-case closed form ([`estimators`]);
//! - the EBLUP MSE components g1/g2/g3 and the admissible uncertainty
//!   measures built from them ([`mse`]);
//! - confidence interval constructors, from the direct interval through
//!   the branching second-order efficient NAS interval ([`intervals`]);
//! - a deterministic, parallel Monte Carlo engine for coverage and
//!   length studies ([`simulation`]).

pub mod error;
pub mod estimators;
pub mod intervals;
pub mod likelihood;
pub mod model;
pub mod mse;
pub mod simulation;
mod streams;

pub use error::{FhError, Result};
pub use estimators::{
    balanced_nas_closed_form, c_variant_existence_holds, estimate_variance, moment_diagnostics,
    nas_existence_holds, SearchConfig, VarianceEstimate,
};
pub use intervals::{IntervalMethod, IntervalResult, NasBranch, NominalLevel};
pub use likelihood::{AdjustmentFactor, AdjustmentKind};
pub use model::{eblup, gls_beta, shrinkage_factor, AreaRecord, ModelFit, SmallAreaDataset};
pub use mse::{c_star_lower_bound, mse_components, uncertainty_measure, MseComponents};
pub use simulation::{
    run_scenario, study1_spec, study2_spec, CellMode, CellRule, CovariateSpec, ScenarioSpec,
    SimulationSummary, Study2Pattern,
};
