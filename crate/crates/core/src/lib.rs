//! Variance reduction for randomized experiments.
//!
//! The estimators here share one idea: add a scaled statistic with (near-)
//! zero expectation under randomization to an existing treatment-effect
//! estimator, choosing the scale to shed variance.
//!
//! - [`metrics`] evaluates mean, ratio, and percentile metrics and their
//!   naive effect estimates.
//! - [`cuped`] fits the optimal augmentation coefficient from pre-period
//!   covariates and provides the ANCOVA regression comparators.
//! - [`ana`] handles metric decomposition with an approximately-null
//!   component: empirical-Bayes prior fitting, the bivariate posterior, and
//!   the frequentist proxy-metric coefficients.
//! - [`simulator`] draws synthetic experiments with known ground truth and
//!   is the oracle for the acceptance suite.
//! - [`data`] owns ingestion and validation for both unit-level CSV and
//!   decomposed-delta JSON inputs.
//!
//! ```
//! use augvr_core::{
//!     cuped_estimate, gen_experiment, BootstrapConfig, MetricSpec, OutcomeDist, SimScenario,
//! };
//!
//! let data = gen_experiment(&SimScenario {
//!     n_units: 10_000,
//!     p_treatment: 0.5,
//!     rho_pre: 0.8,
//!     true_delta: 0.1,
//!     outcome_dist: OutcomeDist::Normal { mu: 0.0, sd: 1.0 },
//!     seed: 7,
//! })
//! .unwrap();
//! let fit = cuped_estimate(
//!     &data,
//!     &MetricSpec::mean("y"),
//!     &[MetricSpec::mean("x_pre")],
//!     &BootstrapConfig::default(),
//! )
//! .unwrap();
//! assert!(fit.variance_reduction_factor < 0.45);
//! assert!(fit.delta.variance <= 0.45 * 4.0 / 10_000.0);
//! ```

pub mod ana;
pub mod cuped;
pub mod data;
pub mod linalg;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use ana::{
    ana_estimate, contraction_gap, fit_prior, posterior, posterior_undecomposed,
    significance_scorecard, theta_max_corr, theta_min_error, AnaError, AnaObjective, AnaPosterior,
    AnaPrior, AnaTheta, Scorecard, ScorecardCounts, ScorecardRow,
};
pub use cuped::{
    ancova_estimate, augmented_delta, cuped_estimate, cuped_estimate_external, optimal_theta,
    optimal_theta_multi, AncovaVariant, Augmentation, AugmentationKind, CupedError, CupedResult,
};
pub use data::{
    load_decomposed_json, load_unit_csv, Assignment, ColumnKind, ColumnSchema, DataError,
    DecomposedDeltaRecord, ExperimentData, UnitRecord,
};
pub use linalg::Mat2;
pub use metrics::{
    bootstrap_variance, metric_value, naive_delta, BootstrapConfig, DeltaEstimate, Method,
    MetricError, MetricSpec,
};
pub use simulator::{
    gen_ana_population, gen_experiment, AnaPopulation, AnaScenario, OutcomeDist, SimError,
    SimScenario, TrueEffect,
};
