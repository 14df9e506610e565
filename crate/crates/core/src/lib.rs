//! Stabilized one-step inference for the maximal natural indirect effect among
//! high-dimensional mediators of a right-censored survival outcome.
//!
//! The pipeline, bottom up:
//!
//! * [`dataset`] loads and validates `(X, δ, A, B, Z)` data and standardizes mediators.
//! * [`censoring`] fits the Kaplan–Meier/Nelson–Aalen censoring model and IPCW responses.
//! * [`nuisance`] fits the per-prefix nuisance bundle, streaming over rows.
//! * [`influence`] evaluates the efficient influence function and the one-step estimator.
//! * [`stabilized`] runs the stabilized estimator over one or many random orderings.
//! * [`competing`] provides the Bonferroni, naive and oracle one-step comparators.
//! * [`simulation`] generates the benchmark models and runs coverage studies.
//! * [`records`] and [`cli`] write analysis records, CSV tables and SVG charts.
//!
//! ```no_run
//! use hdmed::prelude::*;
//!
//! let spec = SimulationSpec::new(Model::M1, 400, 50);
//! let d = generate(&spec, 7)?.standardize_mediators(Standardization::NormalScore)?;
//! let order = ordering_permutation(d.n(), 11);
//! let est = stabilized_one_step(&d, &order, default_q_n(d.n()), &StabilizedConfig::default())?;
//! println!("S* = {:.3}  90% CI ({:.3}, {:.3})", est.s_star, est.ci_low, est.ci_high);
//! # Ok::<(), hdmed::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod censoring;
pub mod cli;
pub mod competing;
pub mod dataset;
pub mod influence;
pub mod linalg;
pub mod nuisance;
pub mod records;
pub mod rng;
pub mod simulation;
pub mod stabilized;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset: {0}")]
    Dataset(#[from] dataset::DatasetError),
    #[error("censoring: {0}")]
    Censoring(#[from] censoring::CensoringError),
    #[error("nuisance: {0}")]
    Nuisance(#[from] nuisance::NuisanceError),
    #[error("stabilized: {0}")]
    Stabilized(#[from] stabilized::StabilizedError),
    #[error("simulation: {0}")]
    Simulation(#[from] simulation::SimulationError),
    #[error("records: {0}")]
    Record(#[from] records::RecordError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Numerical failures (as opposed to invalid input or usage).
    pub fn is_numeric(&self) -> bool {
        use nuisance::NuisanceError as N;
        use stabilized::StabilizedError as S;
        let numeric_nuisance = |e: &N| {
            matches!(
                e,
                N::Collinear { .. } | N::NonConvergence { .. } | N::DegenerateRegression { .. } | N::Positivity { .. }
            )
        };
        match self {
            Error::Nuisance(e) => numeric_nuisance(e),
            Error::Stabilized(e) => match e {
                S::Nuisance(n) | S::Step { source: n, .. } => numeric_nuisance(n),
                S::PrefixPositivity { .. } | S::DegenerateVariance { .. } | S::AllOrderingsFailed(_) => true,
                S::InvalidQn { .. } | S::InvalidOrder { .. } | S::Alpha(_) => false,
            },
            Error::Simulation(simulation::SimulationError::Calibration(_)) => true,
            _ => false,
        }
    }
}

pub mod prelude {
    pub use crate::censoring::{synthetic_responses, CensoringModel};
    pub use crate::competing::{bonferroni_one_step, naive_one_step, oracle_one_step, CompetitorMethod, CompetitorResult};
    pub use crate::dataset::{load_csv, ordering_permutation, CsvSchema, Dataset, MediatorColumns, Standardization};
    pub use crate::influence::{eval_f_star, one_step, one_step_full, OneStepEstimate};
    pub use crate::nuisance::{AnalysisContext, NuisanceOptions, NuisanceScope, NuisanceSet, RiskSetMoments};
    pub use crate::simulation::{
        calibrate_censoring_rate, generate, run_coverage_study, CoverageReport, Method, Model, SimulationSpec,
        StudyConfig,
    };
    pub use crate::stabilized::{
        default_q_n, multi_ordering_analysis, stabilized_one_step, OrderingEnsemble, StabilizedConfig,
        StabilizedEstimate,
    };
    pub use crate::Error;
}
