//! Synthetic experiment generation with known ground truth.
//!
//! Two generators: unit-level experiments with a correlated pre-period
//! signal (oracle for the augmentation estimators), and populations of
//! decomposed-delta records drawn from the effect-plus-noise model (oracle
//! for the decomposition estimators). Both are deterministic functions of
//! their scenario, including the seed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ColumnKind, ColumnSchema, DecomposedDeltaRecord, ExperimentData};
use crate::linalg::Mat2;
use crate::parallel;
use crate::rng;

/// Stream indices 0..ASSIGNMENT_RETRY_LIMIT are assignment draws (one per
/// retry); VALUES_STREAM carries the outcome draws so retries never shift
/// them.
const ASSIGNMENT_RETRY_LIMIT: u64 = 1000;
const VALUES_STREAM: u64 = ASSIGNMENT_RETRY_LIMIT;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("could not draw a non-empty split after {0} attempts")]
    AssignmentRetriesExhausted(u64),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Marginal outcome distribution for simulated units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum OutcomeDist {
    Normal {
        mu: f64,
        sd: f64,
    },
    /// exp() applied after the correlation is induced on the normal scale,
    /// so `rho_pre` refers to the log scale. The treatment effect is added
    /// after the transform, keeping the ATE equal to `true_delta`.
    LogNormal {
        mu: f64,
        sd: f64,
    },
}

/// Generative description of one unit-level experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_units: usize,
    pub p_treatment: f64,
    /// Correlation between the pre-period signal and the outcome.
    pub rho_pre: f64,
    pub true_delta: f64,
    pub outcome_dist: OutcomeDist,
    pub seed: u64,
}

impl SimScenario {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if self.n_units < 4 {
            return bad(format!("n_units must be >= 4, got {}", self.n_units));
        }
        if !(self.p_treatment > 0.0 && self.p_treatment < 1.0) {
            return bad(format!(
                "p_treatment must lie in (0,1), got {}",
                self.p_treatment
            ));
        }
        let n = self.n_units as f64;
        if self.p_treatment * n < 2.0 || (1.0 - self.p_treatment) * n < 2.0 {
            return bad("expected group sizes must be at least 2".to_string());
        }
        if self.rho_pre.is_nan() || self.rho_pre.abs() >= 1.0 {
            return bad(format!("|rho_pre| must be < 1, got {}", self.rho_pre));
        }
        let sd = match self.outcome_dist {
            OutcomeDist::Normal { sd, .. } | OutcomeDist::LogNormal { sd, .. } => sd,
        };
        if !sd.is_finite() || sd <= 0.0 {
            return bad(format!("sd must be positive and finite, got {sd}"));
        }
        if !self.true_delta.is_finite() {
            return bad("true_delta must be finite".to_string());
        }
        Ok(())
    }
}

/// Draw one experiment: per-unit (x_pre, y) bivariate with correlation
/// `rho_pre`, Bernoulli(p) assignment, `true_delta` added to treated
/// outcomes. Columns are `x_pre` (pre-period) and `y` (outcome).
pub fn gen_experiment(scenario: &SimScenario) -> Result<ExperimentData, SimError> {
    scenario.validate()?;
    let n = scenario.n_units;

    // Assignments, redrawn (rarely) until both groups are populated.
    let mut assignments: Vec<Assignment> = Vec::new();
    let mut ok = false;
    for attempt in 0..ASSIGNMENT_RETRY_LIMIT {
        let mut r = rng::stream(scenario.seed, attempt);
        assignments = (0..n)
            .map(|_| {
                if r.gen_range(0.0..1.0) < scenario.p_treatment {
                    Assignment::Treatment
                } else {
                    Assignment::Control
                }
            })
            .collect();
        let n_t = assignments
            .iter()
            .filter(|a| **a == Assignment::Treatment)
            .count();
        if n_t > 0 && n_t < n {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(SimError::AssignmentRetriesExhausted(ASSIGNMENT_RETRY_LIMIT));
    }

    let mut r = rng::stream(scenario.seed, VALUES_STREAM);
    let rho = scenario.rho_pre;
    let cross = (1.0 - rho * rho).sqrt();
    let mut x_pre = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for assignment in &assignments {
        let z1: f64 = StandardNormal.sample(&mut r);
        let z2: f64 = StandardNormal.sample(&mut r);
        let xn = z1;
        let yn = rho * z1 + cross * z2;
        let (xv, mut yv) = match scenario.outcome_dist {
            OutcomeDist::Normal { mu, sd } => (mu + sd * xn, mu + sd * yn),
            OutcomeDist::LogNormal { mu, sd } => ((mu + sd * xn).exp(), (mu + sd * yn).exp()),
        };
        if *assignment == Assignment::Treatment {
            yv += scenario.true_delta;
        }
        x_pre.push(xv);
        y.push(yv);
    }

    let schema: ColumnSchema = [
        ("y".to_string(), ColumnKind::Outcome),
        ("x_pre".to_string(), ColumnKind::PrePeriod),
    ]
    .into_iter()
    .collect();
    let width = (n as f64).log10().ceil().max(1.0) as usize;
    let unit_ids: Vec<String> = (0..n).map(|i| format!("u{i:0width$}")).collect();
    let columns = [("y".to_string(), y), ("x_pre".to_string(), x_pre)]
        .into_iter()
        .collect();
    Ok(ExperimentData::from_columns(
        format!("sim-{}", scenario.seed),
        schema,
        unit_ids,
        assignments,
        columns,
    )?)
}

/// Generative description of a decomposed-delta population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnaScenario {
    pub n_experiments: usize,
    /// Effect covariance of (d1, d2) across experiments.
    pub lambda: Mat2,
    /// Baseline noise covariance within one experiment.
    pub sigma: Mat2,
    /// Scale of the per-experiment diagonal perturbation of sigma;
    /// 0 keeps sigma_k constant.
    pub sigma_dispersion: f64,
    pub seed: u64,
}

/// Ground truth for one simulated experiment, kept out of the observable
/// records (serialized to a sidecar file by the CLI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub experiment_id: String,
    pub delta: [f64; 2],
}

/// Observable records plus their hidden truths.
#[derive(Clone, Debug, PartialEq)]
pub struct AnaPopulation {
    pub records: Vec<DecomposedDeltaRecord>,
    pub truths: Vec<TrueEffect>,
}

/// Draw a population: per experiment, effect ~ N(0, lambda), noise
/// ~ N(0, sigma_k), observation = effect + noise with sigma_k reported.
/// Experiments use independent per-index streams and may be generated in
/// parallel; output order is by index either way.
pub fn gen_ana_population(scenario: &AnaScenario) -> Result<AnaPopulation, SimError> {
    if scenario.n_experiments == 0 {
        return Err(SimError::InvalidScenario(
            "n_experiments must be positive".into(),
        ));
    }
    if scenario.sigma_dispersion.is_nan() || scenario.sigma_dispersion < 0.0 {
        return Err(SimError::InvalidScenario(format!(
            "sigma_dispersion must be >= 0, got {}",
            scenario.sigma_dispersion
        )));
    }
    let lambda = psd_input(&scenario.lambda, "lambda")?;
    let sigma = psd_input(&scenario.sigma, "sigma")?;
    let lambda_sqrt = lambda.sqrt_psd();
    let disp = scenario.sigma_dispersion;

    let drawn = parallel::map_indexed(scenario.n_experiments, |k| {
        let mut r = rng::stream(scenario.seed, k as u64 + 1);
        // Per-experiment noise covariance: diagonal wobble, off-diagonal
        // clamped to keep the matrix PSD.
        let u1: f64 = r.gen_range(-1.0..1.0);
        let u2: f64 = r.gen_range(-1.0..1.0);
        let d1 = sigma.get(0, 0) * (1.0 + disp * u1).max(0.0);
        let d2 = sigma.get(1, 1) * (1.0 + disp * u2).max(0.0);
        let bound = (d1 * d2).sqrt();
        let off = sigma.get(0, 1).clamp(-bound, bound);
        let sigma_k = if disp == 0.0 {
            sigma
        } else {
            Mat2::sym(d1, off, d2)
        };

        let z: [f64; 4] = [
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
        ];
        let effect = lambda_sqrt.mul_vec([z[0], z[1]]);
        let noise = sigma_k.sqrt_psd().mul_vec([z[2], z[3]]);
        let observed = [effect[0] + noise[0], effect[1] + noise[1]];
        (observed, sigma_k, effect)
    });

    let mut records = Vec::with_capacity(scenario.n_experiments);
    let mut truths = Vec::with_capacity(scenario.n_experiments);
    for (k, (observed, sigma_k, effect)) in drawn.into_iter().enumerate() {
        let id = format!("exp-{k:06}");
        records.push(DecomposedDeltaRecord::new(id.clone(), observed, sigma_k.0)?);
        truths.push(TrueEffect {
            experiment_id: id,
            delta: effect,
        });
    }
    Ok(AnaPopulation { records, truths })
}

fn psd_input(m: &Mat2, name: &str) -> Result<Mat2, SimError> {
    if !m.is_finite() {
        return Err(SimError::InvalidScenario(format!(
            "{name} has non-finite entries"
        )));
    }
    let sym = m.symmetrize();
    let [lo, _] = sym.sym_eigenvalues();
    if lo < -1e-10 {
        return Err(SimError::InvalidScenario(format!(
            "{name} must be positive semidefinite (min eigenvalue {lo})"
        )));
    }
    Ok(if lo < 0.0 { sym.psd_project() } else { sym })
}
