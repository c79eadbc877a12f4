//! Mean-zero augmentation estimators and their regression-adjustment
//! comparators.
//!
//! The augmentation family is delta* = delta_hat + theta * delta0 for any
//! statistic delta0 with zero expectation under randomization. In the
//! convention used throughout this module, `theta` is reported so that the
//! fitted estimate is `naive - theta' * delta(X)`: positive theta for
//! positively correlated covariates, matching the classic pre-period
//! adjustment. At the optimum the achieved variance is
//! `naive * (1 - corr^2)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ColumnKind, ExperimentData};
use crate::linalg;
use crate::metrics::{
    bootstrap_delta_matrix, naive_delta, BootstrapConfig, DeltaEstimate, Method, MetricError,
    MetricSpec, PreparedMetric,
};
use crate::rng;
use crate::stats;

/// Relative ridge added to the augmentation covariance diagonal before
/// solving for theta; resolves exactly collinear covariates.
const THETA_RIDGE_REL: f64 = 1e-10;

/// Covariates whose group variances are below this times the outcome scale
/// are treated as constant.
const DEGENERACY_REL_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum CupedError {
    #[error("estimates come from different experiments: {0:?} vs {1:?}")]
    MismatchedExperiment(String, String),
    #[error("covariate {0} is constant (both group variances below tolerance)")]
    DegenerateCovariate(String),
    #[error("augmentation covariance system is singular")]
    SingularSystem,
    #[error("regression design matrix is singular")]
    SingularDesign,
    #[error("column {0} is not a pre-period column")]
    NotPrePeriod(String),
    #[error("augmentation has {got} values for a group of {expected} units")]
    AugmentationLength { expected: usize, got: usize },
    #[error("need at least one covariate")]
    NoCovariates,
    #[error("{units} units cannot identify {covariates} covariates (need units > covariates + 2)")]
    InsufficientUnits { units: usize, covariates: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// How an augmentation statistic was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AugmentationKind {
    /// Difference of a pre-period metric between the groups.
    PrePeriodDelta(MetricSpec),
    /// Supplied by the caller; assumed mean-zero under randomization.
    External,
}

/// A per-unit augmentation statistic. Its group-mean difference is the
/// mean-zero delta added (scaled by theta) to the target estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    pub kind: AugmentationKind,
    pub values_treatment: Vec<f64>,
    pub values_control: Vec<f64>,
}

impl Augmentation {
    pub fn external(values_treatment: Vec<f64>, values_control: Vec<f64>) -> Self {
        Augmentation {
            kind: AugmentationKind::External,
            values_treatment,
            values_control,
        }
    }

    /// Per-unit values of a pre-period column; the schema kind is enforced.
    pub fn pre_period_mean(data: &ExperimentData, column: &str) -> Result<Self, CupedError> {
        if data.column_kind(column) != Some(ColumnKind::PrePeriod) {
            return Err(CupedError::NotPrePeriod(column.to_string()));
        }
        Ok(Augmentation {
            kind: AugmentationKind::PrePeriodDelta(MetricSpec::mean(column)),
            values_treatment: data.group_column(column, Assignment::Treatment)?,
            values_control: data.group_column(column, Assignment::Control)?,
        })
    }

    /// The realized mean-zero statistic: mean(treatment) - mean(control).
    pub fn delta(&self) -> f64 {
        stats::mean(&self.values_treatment) - stats::mean(&self.values_control)
    }
}

/// Output of a CUPED fit.
#[derive(Clone, Debug, Serialize)]
pub struct CupedResult {
    pub delta: DeltaEstimate,
    pub theta: Vec<f64>,
    pub corr_squared: f64,
    pub variance_reduction_factor: f64,
}

/// Apply a fixed-coefficient augmentation: estimate + theta * aug with
/// variance var + theta^2 var0 + 2 theta cov. `covariance` is the plug-in
/// Cov[delta_hat, aug].
pub fn augmented_delta(
    delta_hat: &DeltaEstimate,
    aug: &DeltaEstimate,
    theta: f64,
    covariance: f64,
) -> Result<DeltaEstimate, CupedError> {
    if delta_hat.experiment_id != aug.experiment_id {
        return Err(CupedError::MismatchedExperiment(
            delta_hat.experiment_id.clone(),
            aug.experiment_id.clone(),
        ));
    }
    let variance =
        (delta_hat.variance + theta * theta * aug.variance + 2.0 * theta * covariance).max(0.0);
    let mut aux = delta_hat.aux.clone();
    aux.insert("theta".to_string(), theta.into());
    aux.insert("augmentation_covariance".to_string(), covariance.into());
    Ok(DeltaEstimate {
        experiment_id: delta_hat.experiment_id.clone(),
        estimate: delta_hat.estimate + theta * aug.estimate,
        variance,
        method: Method::Cuped,
        n_treatment: delta_hat.n_treatment,
        n_control: delta_hat.n_control,
        aux,
    })
}

/// Group-level plug-in moments entering the optimal-theta formula:
/// Cov[mean_g(y), mean_g(x)] = Cov_g[x, y] / n_g summed over groups, and
/// likewise for the variance.
fn mean_delta_moments(data: &ExperimentData, cols: &[&str]) -> Result<Vec<Vec<f64>>, CupedError> {
    let k = cols.len();
    let mut total = vec![vec![0.0; k]; k];
    for group in [Assignment::Treatment, Assignment::Control] {
        let values: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| data.group_column(c, group))
            .collect::<Result<_, _>>()?;
        let n = values[0].len() as f64;
        for i in 0..k {
            for j in i..k {
                let cov = stats::sample_covariance(&values[i], &values[j]) / n;
                total[i][j] += cov;
                if i != j {
                    total[j][i] += cov;
                }
            }
        }
    }
    Ok(total)
}

/// Optimal scalar coefficient for a mean outcome and a single mean
/// covariate, with sample-size-weighted plug-in covariances:
/// theta* = (CovT/nT + CovC/nC) / (VarT/nT + VarC/nC).
/// The fitted augmented estimate is `delta(Y) - theta* delta(X)`.
pub fn optimal_theta(
    data: &ExperimentData,
    outcome: &str,
    covariate: &str,
) -> Result<f64, CupedError> {
    let outcome_scale = stats::sample_variance(data.column(outcome)?);
    let var_t = stats::sample_variance(&data.group_column(covariate, Assignment::Treatment)?);
    let var_c = stats::sample_variance(&data.group_column(covariate, Assignment::Control)?);
    if var_t <= DEGENERACY_REL_TOL * outcome_scale && var_c <= DEGENERACY_REL_TOL * outcome_scale {
        return Err(CupedError::DegenerateCovariate(covariate.to_string()));
    }
    let m = mean_delta_moments(data, &[outcome, covariate])?;
    Ok(m[0][1] / m[1][1])
}

/// Vector analogue: minimizes the plug-in variance of
/// `delta(Y) - theta' delta(X)` by solving (V + ridge I) theta = c with
/// V = Cov[delta(X)] and c = Cov[delta(Y), delta(X_j)].
pub fn optimal_theta_multi(
    data: &ExperimentData,
    outcome: &str,
    covariates: &[&str],
) -> Result<Vec<f64>, CupedError> {
    if covariates.is_empty() {
        return Err(CupedError::NoCovariates);
    }
    if data.n_units() <= covariates.len() + 2 {
        return Err(CupedError::InsufficientUnits {
            units: data.n_units(),
            covariates: covariates.len(),
        });
    }
    let mut cols = vec![outcome];
    cols.extend_from_slice(covariates);
    let m = mean_delta_moments(data, &cols)?;
    let k = covariates.len();
    let c: Vec<f64> = (0..k).map(|j| m[0][j + 1]).collect();
    let v: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| m[i + 1][j + 1]).collect())
        .collect();
    solve_theta(&v, &c)
}

fn solve_theta(v: &[Vec<f64>], c: &[f64]) -> Result<Vec<f64>, CupedError> {
    let k = c.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let trace: f64 = (0..k).map(|i| v[i][i]).sum();
    if trace <= 0.0 {
        // Every augmentation is constant; nothing to adjust with.
        return Ok(vec![0.0; k]);
    }
    let ridge = THETA_RIDGE_REL * trace / k as f64;
    let mut a = v.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    linalg::solve(&a, c).ok_or(CupedError::SingularSystem)
}

/// Quadratic-form variance of `delta(Y) - theta' delta(X)` under plug-in
/// moments.
fn achieved_variance(var_target: f64, c: &[f64], v: &[Vec<f64>], theta: &[f64]) -> f64 {
    let k = theta.len();
    let mut out = var_target;
    for i in 0..k {
        out -= 2.0 * theta[i] * c[i];
        for j in 0..k {
            out += theta[i] * v[i][j] * theta[j];
        }
    }
    out
}

enum AugSource<'a> {
    Spec(&'a MetricSpec),
    External(&'a Augmentation),
}

impl AugSource<'_> {
    fn label(&self, index: usize) -> String {
        match self {
            AugSource::Spec(spec) => spec.to_string(),
            AugSource::External(_) => format!("external_{index}"),
        }
    }
}

/// CUPED estimate of a target metric using pre-period metric covariates.
///
/// Moments come from the closed form when everything is a mean; otherwise
/// from a joint bootstrap that evaluates the target and every augmentation
/// on shared resample indices, so Cov[target, augmentation] is coherent.
pub fn cuped_estimate(
    data: &ExperimentData,
    spec: &MetricSpec,
    covariates: &[MetricSpec],
    boot: &BootstrapConfig,
) -> Result<CupedResult, CupedError> {
    for cov in covariates {
        cov.validate(data.schema())?;
        for col in cov.columns() {
            if data.column_kind(col) != Some(ColumnKind::PrePeriod) {
                return Err(CupedError::NotPrePeriod(col.to_string()));
            }
        }
    }
    let sources: Vec<AugSource> = covariates.iter().map(AugSource::Spec).collect();
    cuped_fit(data, spec, &sources, boot)
}

/// CUPED estimate using externally supplied mean-zero augmentation values
/// (one statistic per unit, aligned with the group row order).
pub fn cuped_estimate_external(
    data: &ExperimentData,
    spec: &MetricSpec,
    augmentations: &[Augmentation],
    boot: &BootstrapConfig,
) -> Result<CupedResult, CupedError> {
    let n_t = data.n_group(Assignment::Treatment);
    let n_c = data.n_group(Assignment::Control);
    for aug in augmentations {
        if aug.values_treatment.len() != n_t {
            return Err(CupedError::AugmentationLength {
                expected: n_t,
                got: aug.values_treatment.len(),
            });
        }
        if aug.values_control.len() != n_c {
            return Err(CupedError::AugmentationLength {
                expected: n_c,
                got: aug.values_control.len(),
            });
        }
    }
    let sources: Vec<AugSource> = augmentations.iter().map(AugSource::External).collect();
    cuped_fit(data, spec, &sources, boot)
}

fn cuped_fit(
    data: &ExperimentData,
    spec: &MetricSpec,
    sources: &[AugSource],
    boot: &BootstrapConfig,
) -> Result<CupedResult, CupedError> {
    let k = sources.len();
    if k > 0 && data.n_units() <= k + 2 {
        return Err(CupedError::InsufficientUnits {
            units: data.n_units(),
            covariates: k,
        });
    }
    let naive = naive_delta(data, spec, boot)?;

    // Realized augmentation deltas on the full sample.
    let mut scratch = Vec::new();
    let prepared: Vec<PreparedMetric> = {
        let mut all = Vec::with_capacity(k + 1);
        all.push(PreparedMetric::from_spec(data, spec)?);
        for s in sources {
            all.push(match s {
                AugSource::Spec(cov) => PreparedMetric::from_spec(data, cov)?,
                AugSource::External(aug) => PreparedMetric::from_unit_values(
                    aug.values_treatment.clone(),
                    aug.values_control.clone(),
                ),
            });
        }
        all
    };
    let aug_deltas: Vec<f64> = prepared[1..]
        .iter()
        .map(|p| {
            let t = p.group_value(Assignment::Treatment, None, &mut scratch)?;
            let c = p.group_value(Assignment::Control, None, &mut scratch)?;
            Ok::<f64, MetricError>(t - c)
        })
        .collect::<Result<_, _>>()?;

    let all_mean = spec.is_mean()
        && sources.iter().all(|s| match s {
            AugSource::Spec(cov) => cov.is_mean(),
            AugSource::External(_) => true,
        });

    let (var_target, c, v, moment_method) = if all_mean {
        let m = mean_moments_for(data, spec, sources)?;
        let c: Vec<f64> = (0..k).map(|j| m[0][j + 1]).collect();
        let v: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| m[i + 1][j + 1]).collect())
            .collect();
        (m[0][0], c, v, "closed_form")
    } else {
        let rows = bootstrap_delta_matrix(&prepared, boot.resamples, boot.seed)?;
        let cols: Vec<Vec<f64>> = (0..=k)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let c: Vec<f64> = (1..=k)
            .map(|j| stats::sample_covariance(&cols[0], &cols[j]))
            .collect();
        let v: Vec<Vec<f64>> = (1..=k)
            .map(|i| {
                (1..=k)
                    .map(|j| stats::sample_covariance(&cols[i], &cols[j]))
                    .collect()
            })
            .collect();
        (stats::sample_variance(&cols[0]), c, v, "joint_bootstrap")
    };

    let theta = solve_theta(&v, &c)?;
    let reduction = if var_target > 0.0 {
        (var_target - achieved_variance(var_target, &c, &v, &theta)) / var_target
    } else {
        0.0
    };
    let corr_squared = reduction.clamp(0.0, 1.0);
    let variance_reduction_factor = 1.0 - corr_squared;

    let estimate = naive.estimate
        - theta
            .iter()
            .zip(&aug_deltas)
            .map(|(t, d)| t * d)
            .sum::<f64>();

    let mut aux = BTreeMap::new();
    aux.insert("metric".to_string(), spec.to_string().into());
    aux.insert("moment_method".to_string(), moment_method.into());
    aux.insert("naive_variance".to_string(), var_target.into());
    aux.insert("corr_squared".to_string(), corr_squared.into());
    for (i, s) in sources.iter().enumerate() {
        aux.insert(format!("covariate_{i}"), s.label(i).into());
    }
    if moment_method == "joint_bootstrap" {
        aux.insert("bootstrap_resamples".to_string(), boot.resamples.into());
        aux.insert("bootstrap_seed".to_string(), boot.seed.into());
        aux.insert("rng".to_string(), rng::RNG_NAME.into());
    }
    // Theta's own sampling error is ignored in the reported variance
    // (plug-in practice); flag that in the output.
    aux.insert("theta_treated_as_constant".to_string(), true.into());

    let delta = DeltaEstimate {
        experiment_id: naive.experiment_id.clone(),
        estimate,
        variance: var_target * variance_reduction_factor,
        method: Method::Cuped,
        n_treatment: naive.n_treatment,
        n_control: naive.n_control,
        aux,
    };
    Ok(CupedResult {
        delta,
        theta,
        corr_squared,
        variance_reduction_factor,
    })
}

fn mean_moments_for(
    data: &ExperimentData,
    spec: &MetricSpec,
    sources: &[AugSource],
) -> Result<Vec<Vec<f64>>, CupedError> {
    // Assemble per-group value vectors: target column first, then one per
    // augmentation.
    let MetricSpec::Mean { column } = spec else {
        unreachable!("closed-form moments require a mean target");
    };
    let k = sources.len();
    let mut total = vec![vec![0.0; k + 1]; k + 1];
    for group in [Assignment::Treatment, Assignment::Control] {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
        values.push(data.group_column(column, group)?);
        for s in sources {
            values.push(match s {
                AugSource::Spec(MetricSpec::Mean { column }) => data.group_column(column, group)?,
                AugSource::Spec(_) => unreachable!("closed-form moments require mean covariates"),
                AugSource::External(aug) => {
                    if group == Assignment::Treatment {
                        aug.values_treatment.clone()
                    } else {
                        aug.values_control.clone()
                    }
                }
            });
        }
        let n = values[0].len() as f64;
        for i in 0..=k {
            for j in i..=k {
                let cov = stats::sample_covariance(&values[i], &values[j]) / n;
                total[i][j] += cov;
                if i != j {
                    total[j][i] += cov;
                }
            }
        }
    }
    Ok(total)
}

/// Regression-adjustment variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AncovaVariant {
    /// Y ~ 1 + A + X (pooled slope).
    Ancova1,
    /// Y ~ 1 + A + Xc + A*Xc with X centered at the overall mean.
    Ancova2,
}

/// OLS treatment coefficient with HC0 (heteroskedasticity-robust) variance.
///
/// A covariate with (pooled) variance below tolerance relative to the
/// outcome collapses the design to the plain difference in means.
pub fn ancova_estimate(
    data: &ExperimentData,
    outcome: &str,
    covariate: &str,
    variant: AncovaVariant,
) -> Result<DeltaEstimate, CupedError> {
    let y = data.column(outcome)?;
    let x = data.column(covariate)?;
    let n = y.len();
    let a: Vec<f64> = data
        .assignments()
        .iter()
        .map(|g| {
            if *g == Assignment::Treatment {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let covariate_degenerate =
        stats::sample_variance(x) <= DEGENERACY_REL_TOL * stats::sample_variance(y);

    let ones = vec![1.0; n];
    let design: Vec<Vec<f64>> = if covariate_degenerate {
        vec![ones, a.clone()]
    } else {
        match variant {
            AncovaVariant::Ancova1 => vec![ones, a.clone(), x.to_vec()],
            AncovaVariant::Ancova2 => {
                let xbar = stats::mean(x);
                let xc: Vec<f64> = x.iter().map(|v| v - xbar).collect();
                let axc: Vec<f64> = xc.iter().zip(&a).map(|(xv, av)| xv * av).collect();
                vec![ones, a.clone(), xc, axc]
            }
        }
    };

    let (beta, var_beta) = ols_hc0(&design, y).ok_or(CupedError::SingularDesign)?;

    let mut aux = BTreeMap::new();
    aux.insert("outcome".to_string(), outcome.into());
    aux.insert("covariate".to_string(), covariate.into());
    aux.insert("covariance_estimator".to_string(), "hc0".into());
    aux.insert("intercept".to_string(), beta[0].into());
    if covariate_degenerate {
        aux.insert("covariate_dropped".to_string(), true.into());
    } else {
        aux.insert("beta_covariate".to_string(), beta[2].into());
        if variant == AncovaVariant::Ancova2 {
            aux.insert("beta_interaction".to_string(), beta[3].into());
        }
    }

    Ok(DeltaEstimate {
        experiment_id: data.experiment_id().to_string(),
        estimate: beta[1],
        variance: var_beta[1][1].max(0.0),
        method: match variant {
            AncovaVariant::Ancova1 => Method::Ancova1,
            AncovaVariant::Ancova2 => Method::Ancova2,
        },
        n_treatment: Some(data.n_group(Assignment::Treatment)),
        n_control: Some(data.n_group(Assignment::Control)),
        aux,
    })
}

/// Column-major OLS via the normal equations, returning the coefficients and
/// the HC0 sandwich covariance (X'X)^-1 (sum e_i^2 x_i x_i') (X'X)^-1.
#[allow(clippy::needless_range_loop)]
fn ols_hc0(cols: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = cols.len();
    let n = y.len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        for p in 0..k {
            let xp = cols[p][i];
            xty[p] += xp * y[i];
            for q in p..k {
                xtx[p][q] += xp * cols[q][i];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            xtx[p][q] = xtx[q][p];
        }
    }
    let beta = linalg::solve(&xtx, &xty)?;
    let bread = linalg::invert(&xtx)?;

    let mut meat = vec![vec![0.0; k]; k];
    for i in 0..n {
        let mut fitted = 0.0;
        for p in 0..k {
            fitted += beta[p] * cols[p][i];
        }
        let e2 = (y[i] - fitted) * (y[i] - fitted);
        for p in 0..k {
            for q in p..k {
                meat[p][q] += e2 * cols[p][i] * cols[q][i];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            meat[p][q] = meat[q][p];
        }
    }

    let mut half = vec![vec![0.0; k]; k];
    for p in 0..k {
        for q in 0..k {
            half[p][q] = (0..k).map(|r| bread[p][r] * meat[r][q]).sum();
        }
    }
    let mut var = vec![vec![0.0; k]; k];
    for p in 0..k {
        for q in 0..k {
            var[p][q] = (0..k).map(|r| half[p][r] * bread[r][q]).sum();
        }
    }
    Some((beta, var))
}
