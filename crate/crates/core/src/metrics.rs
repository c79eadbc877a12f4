//! Metric definitions and naive treatment-effect estimates.
//!
//! A metric is a mean, a ratio of per-unit sums, or an order-statistic
//! percentile. The naive effect estimate is the treatment/control difference
//! of metric values; its variance comes from the closed form (mean), the
//! delta method (ratio), or a within-group bootstrap (percentile).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Assignment, ColumnSchema, ExperimentData};
use crate::parallel;
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("percentile level must lie strictly inside (0,1), got {0}")]
    InvalidQuantile(f64),
    #[error("invalid metric spec {input:?}: {reason}")]
    InvalidSpec { input: String, reason: String },
    #[error("denominator sums to zero in {0} group")]
    ZeroDenominator(Assignment),
    #[error("empty group: {0}")]
    EmptyGroup(Assignment),
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
}

/// Declarative metric definition over named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Mean {
        column: String,
    },
    Ratio {
        numerator: String,
        denominator: String,
    },
    Percentile {
        column: String,
        q: f64,
    },
}

impl MetricSpec {
    pub fn mean(column: impl Into<String>) -> Self {
        MetricSpec::Mean {
            column: column.into(),
        }
    }

    pub fn ratio(numerator: impl Into<String>, denominator: impl Into<String>) -> Self {
        MetricSpec::Ratio {
            numerator: numerator.into(),
            denominator: denominator.into(),
        }
    }

    pub fn percentile(column: impl Into<String>, q: f64) -> Result<Self, MetricError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(MetricError::InvalidQuantile(q));
        }
        Ok(MetricSpec::Percentile {
            column: column.into(),
            q,
        })
    }

    /// Parse the CLI syntax: `mean:y`, `ratio:bookings/searches`,
    /// `p50:latency` (pNN means q = NN/100).
    pub fn parse(input: &str) -> Result<Self, MetricError> {
        let bad = |reason: &str| MetricError::InvalidSpec {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let (head, rest) = input
            .split_once(':')
            .ok_or_else(|| bad("expected <kind>:<columns>"))?;
        let rest = rest.trim();
        if rest.is_empty() {
            return Err(bad("missing column name"));
        }
        match head.trim() {
            "mean" => Ok(MetricSpec::mean(rest)),
            "ratio" => {
                let (numer, denom) = rest
                    .split_once('/')
                    .ok_or_else(|| bad("ratio needs numerator/denominator"))?;
                if numer.trim().is_empty() || denom.trim().is_empty() {
                    return Err(bad("ratio needs numerator/denominator"));
                }
                Ok(MetricSpec::ratio(numer.trim(), denom.trim()))
            }
            p if p.starts_with('p') => {
                let level: f64 = p[1..]
                    .parse()
                    .map_err(|_| bad("percentile level must be numeric, e.g. p50"))?;
                if !(level > 0.0 && level < 100.0) {
                    return Err(MetricError::InvalidQuantile(level / 100.0));
                }
                MetricSpec::percentile(rest, level / 100.0)
            }
            _ => Err(bad("unknown metric kind (mean | ratio | pNN)")),
        }
    }

    /// Columns the metric reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            MetricSpec::Mean { column } => vec![column],
            MetricSpec::Ratio {
                numerator,
                denominator,
            } => vec![numerator, denominator],
            MetricSpec::Percentile { column, .. } => vec![column],
        }
    }

    pub fn is_mean(&self) -> bool {
        matches!(self, MetricSpec::Mean { .. })
    }

    /// Check that referenced columns exist (and percentile level is valid).
    pub fn validate(&self, schema: &ColumnSchema) -> Result<(), MetricError> {
        if let MetricSpec::Percentile { q, .. } = self {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(MetricError::InvalidQuantile(*q));
            }
        }
        for col in self.columns() {
            if !schema.contains_key(col) {
                return Err(MetricError::UnknownColumn(col.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Mean { column } => write!(f, "mean:{column}"),
            MetricSpec::Ratio {
                numerator,
                denominator,
            } => {
                write!(f, "ratio:{numerator}/{denominator}")
            }
            MetricSpec::Percentile { column, q } => write!(f, "p{}:{column}", q * 100.0),
        }
    }
}

/// Estimator that produced a [`DeltaEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Cuped,
    Ancova1,
    Ancova2,
    AnaMinErr,
    AnaMaxCorr,
    AnaComponent,
}

/// A treatment-effect estimate with its variance and provenance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaEstimate {
    pub experiment_id: String,
    pub estimate: f64,
    pub variance: f64,
    pub method: Method,
    pub n_treatment: Option<usize>,
    pub n_control: Option<usize>,
    /// Free-form extras: theta used, correlation achieved, variance method.
    pub aux: BTreeMap<String, serde_json::Value>,
}

impl DeltaEstimate {
    pub fn se(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }

    pub fn z(&self) -> f64 {
        stats::z_score(self.estimate, self.variance)
    }

    pub fn p_value(&self) -> f64 {
        stats::two_sided_p(self.z())
    }
}

/// Bootstrap settings for metrics without a closed-form variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 2000,
            seed: 0,
        }
    }
}

/// Metric value over one group.
pub fn metric_value(
    data: &ExperimentData,
    spec: &MetricSpec,
    group: Assignment,
) -> Result<f64, MetricError> {
    let prepared = PreparedMetric::from_spec(data, spec)?;
    prepared.group_value(group, None, &mut Vec::new())
}

/// Naive effect estimate: treatment metric minus control metric, with the
/// per-kind variance described in the module docs.
pub fn naive_delta(
    data: &ExperimentData,
    spec: &MetricSpec,
    boot: &BootstrapConfig,
) -> Result<DeltaEstimate, MetricError> {
    let prepared = PreparedMetric::from_spec(data, spec)?;
    let mt = prepared.group_value(Assignment::Treatment, None, &mut Vec::new())?;
    let mc = prepared.group_value(Assignment::Control, None, &mut Vec::new())?;
    let estimate = mt - mc;

    let mut aux = BTreeMap::new();
    aux.insert("metric".to_string(), spec.to_string().into());
    let variance = match spec {
        MetricSpec::Mean { column } => {
            aux.insert("variance_method".to_string(), "closed_form_mean".into());
            let t = data
                .group_column(column, Assignment::Treatment)
                .map_err(data_col_err)?;
            let c = data
                .group_column(column, Assignment::Control)
                .map_err(data_col_err)?;
            stats::sample_variance(&t) / t.len() as f64
                + stats::sample_variance(&c) / c.len() as f64
        }
        MetricSpec::Ratio { .. } => {
            aux.insert("variance_method".to_string(), "delta_method_ratio".into());
            (ratio_delta_method_variance(&prepared, Assignment::Treatment)?
                + ratio_delta_method_variance(&prepared, Assignment::Control)?)
            .max(0.0)
        }
        MetricSpec::Percentile { .. } => {
            aux.insert("variance_method".to_string(), "bootstrap".into());
            aux.insert("bootstrap_resamples".to_string(), boot.resamples.into());
            aux.insert("bootstrap_seed".to_string(), boot.seed.into());
            aux.insert("rng".to_string(), rng::RNG_NAME.into());
            bootstrap_variance_prepared(&prepared, boot.resamples, boot.seed)?
        }
    };

    Ok(DeltaEstimate {
        experiment_id: data.experiment_id().to_string(),
        estimate,
        variance,
        method: Method::Naive,
        n_treatment: Some(data.n_group(Assignment::Treatment)),
        n_control: Some(data.n_group(Assignment::Control)),
        aux,
    })
}

/// Within-group bootstrap variance of the metric difference. Deterministic
/// given the seed: resample `b` draws from an independent stream keyed by
/// `(seed, b)`, so the resamples may run in parallel.
pub fn bootstrap_variance(
    data: &ExperimentData,
    spec: &MetricSpec,
    resamples: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    let prepared = PreparedMetric::from_spec(data, spec)?;
    bootstrap_variance_prepared(&prepared, resamples, seed)
}

fn bootstrap_variance_prepared(
    prepared: &PreparedMetric,
    resamples: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    let deltas = bootstrap_delta_matrix(std::slice::from_ref(prepared), resamples, seed)?;
    let column: Vec<f64> = deltas.iter().map(|row| row[0]).collect();
    Ok(stats::sample_variance(&column))
}

/// Joint bootstrap: one shared pair of index draws per resample, every
/// prepared metric evaluated on the same resampled units. Returns a
/// `resamples x metrics` matrix of deltas.
pub(crate) fn bootstrap_delta_matrix(
    prepared: &[PreparedMetric],
    resamples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, MetricError> {
    if resamples < 100 {
        return Err(MetricError::TooFewResamples(resamples));
    }
    let (n_t, n_c) = prepared
        .first()
        .map(|p| (p.n_treatment(), p.n_control()))
        .unwrap_or((0, 0));
    debug_assert!(prepared
        .iter()
        .all(|p| p.n_treatment() == n_t && p.n_control() == n_c));
    if n_t == 0 {
        return Err(MetricError::EmptyGroup(Assignment::Treatment));
    }
    if n_c == 0 {
        return Err(MetricError::EmptyGroup(Assignment::Control));
    }

    let rows = parallel::map_indexed(resamples, |b| -> Result<Vec<f64>, MetricError> {
        let mut r = rng::stream(seed, b as u64 + 1);
        let idx_t: Vec<usize> = (0..n_t).map(|_| r.gen_range(0..n_t)).collect();
        let idx_c: Vec<usize> = (0..n_c).map(|_| r.gen_range(0..n_c)).collect();
        let mut scratch = Vec::new();
        prepared
            .iter()
            .map(|p| {
                let t = p.group_value(Assignment::Treatment, Some(&idx_t), &mut scratch)?;
                let c = p.group_value(Assignment::Control, Some(&idx_c), &mut scratch)?;
                Ok(t - c)
            })
            .collect()
    });
    rows.into_iter().collect()
}

fn data_col_err(e: crate::data::DataError) -> MetricError {
    MetricError::UnknownColumn(e.to_string())
}

/// Delta-method variance of a per-unit ratio metric in one group:
/// Var[R] ~ (s2_N - 2 R s_ND + R^2 s2_D) / (n * Dbar^2).
fn ratio_delta_method_variance(
    prepared: &PreparedMetric,
    group: Assignment,
) -> Result<f64, MetricError> {
    let PreparedKind::Ratio { tn, td, cn, cd, .. } = &prepared.kind else {
        unreachable!("ratio variance called on non-ratio metric");
    };
    let (numer, denom) = match group {
        Assignment::Treatment => (tn, td),
        Assignment::Control => (cn, cd),
    };
    let n = numer.len() as f64;
    let dbar = stats::mean(denom);
    let dsum: f64 = denom.iter().sum();
    if dsum == 0.0 {
        return Err(MetricError::ZeroDenominator(group));
    }
    let r = numer.iter().sum::<f64>() / dsum;
    let s2n = stats::sample_variance(numer);
    let s2d = stats::sample_variance(denom);
    let snd = stats::sample_covariance(numer, denom);
    Ok((s2n - 2.0 * r * snd + r * r * s2d) / (n * dbar * dbar))
}

/// A metric bound to its per-group input values, ready for repeated
/// (re)evaluation over resampled indices.
pub(crate) struct PreparedMetric {
    kind: PreparedKind,
}

enum PreparedKind {
    /// Metric = mean of a per-unit statistic (also covers externally
    /// supplied augmentation values).
    MeanVals {
        t: Vec<f64>,
        c: Vec<f64>,
    },
    Ratio {
        tn: Vec<f64>,
        td: Vec<f64>,
        cn: Vec<f64>,
        cd: Vec<f64>,
    },
    Percentile {
        t: Vec<f64>,
        c: Vec<f64>,
        q: f64,
    },
}

impl PreparedMetric {
    pub(crate) fn from_spec(data: &ExperimentData, spec: &MetricSpec) -> Result<Self, MetricError> {
        spec.validate(data.schema())?;
        let grab = |col: &str, g: Assignment| data.group_column(col, g).map_err(data_col_err);
        let kind = match spec {
            MetricSpec::Mean { column } => PreparedKind::MeanVals {
                t: grab(column, Assignment::Treatment)?,
                c: grab(column, Assignment::Control)?,
            },
            MetricSpec::Ratio {
                numerator,
                denominator,
            } => PreparedKind::Ratio {
                tn: grab(numerator, Assignment::Treatment)?,
                td: grab(denominator, Assignment::Treatment)?,
                cn: grab(numerator, Assignment::Control)?,
                cd: grab(denominator, Assignment::Control)?,
            },
            MetricSpec::Percentile { column, q } => PreparedKind::Percentile {
                t: grab(column, Assignment::Treatment)?,
                c: grab(column, Assignment::Control)?,
                q: *q,
            },
        };
        Ok(PreparedMetric { kind })
    }

    /// Wrap externally supplied per-unit values as a mean-form metric.
    pub(crate) fn from_unit_values(t: Vec<f64>, c: Vec<f64>) -> Self {
        PreparedMetric {
            kind: PreparedKind::MeanVals { t, c },
        }
    }

    fn n_treatment(&self) -> usize {
        match &self.kind {
            PreparedKind::MeanVals { t, .. } => t.len(),
            PreparedKind::Ratio { tn, .. } => tn.len(),
            PreparedKind::Percentile { t, .. } => t.len(),
        }
    }

    fn n_control(&self) -> usize {
        match &self.kind {
            PreparedKind::MeanVals { c, .. } => c.len(),
            PreparedKind::Ratio { cn, .. } => cn.len(),
            PreparedKind::Percentile { c, .. } => c.len(),
        }
    }

    /// Metric value over one group, optionally restricted to resampled
    /// positions (indices into the group-local arrays).
    pub(crate) fn group_value(
        &self,
        group: Assignment,
        idx: Option<&[usize]>,
        scratch: &mut Vec<f64>,
    ) -> Result<f64, MetricError> {
        match &self.kind {
            PreparedKind::MeanVals { t, c } => {
                let vals = if group == Assignment::Treatment { t } else { c };
                if vals.is_empty() {
                    return Err(MetricError::EmptyGroup(group));
                }
                Ok(match idx {
                    None => stats::mean(vals),
                    Some(ix) => ix.iter().map(|&i| vals[i]).sum::<f64>() / ix.len() as f64,
                })
            }
            PreparedKind::Ratio { tn, td, cn, cd } => {
                let (numer, denom) = if group == Assignment::Treatment {
                    (tn, td)
                } else {
                    (cn, cd)
                };
                if numer.is_empty() {
                    return Err(MetricError::EmptyGroup(group));
                }
                let (ns, ds) = match idx {
                    None => (numer.iter().sum::<f64>(), denom.iter().sum::<f64>()),
                    Some(ix) => (
                        ix.iter().map(|&i| numer[i]).sum::<f64>(),
                        ix.iter().map(|&i| denom[i]).sum::<f64>(),
                    ),
                };
                if ds == 0.0 {
                    return Err(MetricError::ZeroDenominator(group));
                }
                Ok(ns / ds)
            }
            PreparedKind::Percentile { t, c, q } => {
                let vals = if group == Assignment::Treatment { t } else { c };
                if vals.is_empty() {
                    return Err(MetricError::EmptyGroup(group));
                }
                scratch.clear();
                match idx {
                    None => scratch.extend_from_slice(vals),
                    Some(ix) => scratch.extend(ix.iter().map(|&i| vals[i])),
                }
                Ok(percentile_of_unsorted(scratch, *q))
            }
        }
    }
}

/// Percentile by linear interpolation between adjacent order statistics at
/// rank q*(n-1)+1 (1-indexed); sorts its scratch input in place.
pub(crate) fn percentile_of_unsorted(values: &mut [f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let h = q * (n - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return values[n - 1];
    }
    let frac = h - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_unit_csv, ColumnKind};

    fn schema(cols: &[(&str, ColumnKind)]) -> ColumnSchema {
        cols.iter().map(|(n, k)| (n.to_string(), *k)).collect()
    }

    fn dataset(rows: &str, cols: &[(&str, ColumnKind)]) -> ExperimentData {
        read_unit_csv(rows.as_bytes(), "test", &schema(cols)).unwrap()
    }

    fn simple_y() -> ExperimentData {
        dataset(
            "unit_id,assignment,y\n\
             t1,treatment,1\nt2,treatment,2\nt3,treatment,3\n\
             c1,control,1\nc2,control,2\nc3,control,3\n",
            &[("y", ColumnKind::Outcome)],
        )
    }

    #[test]
    fn parse_spec_syntax() {
        assert_eq!(MetricSpec::parse("mean:y").unwrap(), MetricSpec::mean("y"));
        assert_eq!(
            MetricSpec::parse("ratio:bookings/searches").unwrap(),
            MetricSpec::ratio("bookings", "searches")
        );
        assert_eq!(
            MetricSpec::parse("p50:latency").unwrap(),
            MetricSpec::percentile("latency", 0.5).unwrap()
        );
        assert_eq!(
            MetricSpec::parse("p97.5:latency").unwrap(),
            MetricSpec::percentile("latency", 0.975).unwrap()
        );
        assert!(MetricSpec::parse("median:y").is_err());
        assert!(MetricSpec::parse("p0:y").is_err());
        assert!(MetricSpec::parse("p100:y").is_err());
        assert!(MetricSpec::parse("ratio:a").is_err());
        assert!(MetricSpec::parse("mean").is_err());
    }

    #[test]
    fn mean_of_small_group() {
        let data = simple_y();
        let m = metric_value(&data, &MetricSpec::mean("y"), Assignment::Treatment).unwrap();
        assert_eq!(m, 2.0);
    }

    #[test]
    fn ratio_of_sums() {
        let data = dataset(
            "unit_id,assignment,n,d\n\
             t1,treatment,1,2\nt2,treatment,1,2\n\
             c1,control,3,2\nc2,control,1,2\n",
            &[("n", ColumnKind::Numerator), ("d", ColumnKind::Denominator)],
        );
        let spec = MetricSpec::ratio("n", "d");
        assert_eq!(
            metric_value(&data, &spec, Assignment::Treatment).unwrap(),
            0.5
        );
        assert_eq!(
            metric_value(&data, &spec, Assignment::Control).unwrap(),
            1.0
        );
    }

    #[test]
    fn zero_denominator_errors() {
        let data = dataset(
            "unit_id,assignment,n,d\n\
             t1,treatment,1,1\nt2,treatment,1,-1\n\
             c1,control,1,1\nc2,control,1,1\n",
            &[("n", ColumnKind::Numerator), ("d", ColumnKind::Denominator)],
        );
        let err =
            metric_value(&data, &MetricSpec::ratio("n", "d"), Assignment::Treatment).unwrap_err();
        assert_eq!(err, MetricError::ZeroDenominator(Assignment::Treatment));
    }

    #[test]
    fn percentile_interpolates_order_statistics() {
        // Brute-force oracle: rank 0.5*(4-1)+1 = 2.5 between sorted values
        // 2 and 3 of {1,2,3,4}.
        let mut vals = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile_of_unsorted(&mut vals, 0.5), 2.5);
        let mut vals = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_of_unsorted(&mut vals, 0.25), 1.75);
        let mut single = [7.0];
        assert_eq!(percentile_of_unsorted(&mut single, 0.9), 7.0);
    }

    #[test]
    fn unknown_column_rejected() {
        let data = simple_y();
        let err = metric_value(&data, &MetricSpec::mean("z"), Assignment::Treatment).unwrap_err();
        assert_eq!(err, MetricError::UnknownColumn("z".to_string()));
    }

    #[test]
    fn naive_delta_zero_within_group_variance() {
        let data = dataset(
            "unit_id,assignment,y\n\
             t1,treatment,2\nt2,treatment,2\nc1,control,1\nc2,control,1\n",
            &[("y", ColumnKind::Outcome)],
        );
        let d = naive_delta(&data, &MetricSpec::mean("y"), &BootstrapConfig::default()).unwrap();
        assert_eq!(d.estimate, 1.0);
        assert_eq!(d.variance, 0.0);
        assert_eq!(d.method, Method::Naive);
        assert_eq!(d.n_treatment, Some(2));
    }

    #[test]
    fn naive_delta_identical_groups_is_zero() {
        let d = naive_delta(
            &simple_y(),
            &MetricSpec::mean("y"),
            &BootstrapConfig::default(),
        )
        .unwrap();
        assert_eq!(d.estimate, 0.0);
    }

    #[test]
    fn ratio_with_unit_denominator_equals_mean() {
        let data = dataset(
            "unit_id,assignment,y,one\n\
             t1,treatment,1.25,1\nt2,treatment,2.5,1\nt3,treatment,0.125,1\n\
             c1,control,0.5,1\nc2,control,3.75,1\n",
            &[("y", ColumnKind::Outcome), ("one", ColumnKind::Denominator)],
        );
        for group in [Assignment::Treatment, Assignment::Control] {
            let m = metric_value(&data, &MetricSpec::mean("y"), group).unwrap();
            let r = metric_value(&data, &MetricSpec::ratio("y", "one"), group).unwrap();
            assert_eq!(m, r, "ratio with denominator 1 must equal mean exactly");
        }
    }

    #[test]
    fn bootstrap_constant_column_is_zero() {
        let data = dataset(
            "unit_id,assignment,y\n\
             t1,treatment,5\nt2,treatment,5\nt3,treatment,5\n\
             c1,control,5\nc2,control,5\n",
            &[("y", ColumnKind::Outcome)],
        );
        let v =
            bootstrap_variance(&data, &MetricSpec::percentile("y", 0.5).unwrap(), 200, 7).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let data = simple_y();
        let spec = MetricSpec::percentile("y", 0.5).unwrap();
        let a = bootstrap_variance(&data, &spec, 250, 99).unwrap();
        let b = bootstrap_variance(&data, &spec, 250, 99).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "same seed must be bit-identical");
        let c = bootstrap_variance(&data, &spec, 250, 100).unwrap();
        assert_ne!(a, c, "different seed should perturb the estimate");
    }

    #[test]
    fn bootstrap_rejects_tiny_resamples() {
        let data = simple_y();
        let err = bootstrap_variance(&data, &MetricSpec::mean("y"), 99, 1).unwrap_err();
        assert_eq!(err, MetricError::TooFewResamples(99));
    }

    #[test]
    fn ratio_delta_method_known_value() {
        // Degenerate denominator spread: denominator constant 1 reduces the
        // delta method to the mean-metric variance.
        let data = dataset(
            "unit_id,assignment,y,one\n\
             t1,treatment,1,1\nt2,treatment,2,1\nt3,treatment,3,1\n\
             c1,control,4,1\nc2,control,6,1\n",
            &[("y", ColumnKind::Outcome), ("one", ColumnKind::Denominator)],
        );
        let r = naive_delta(
            &data,
            &MetricSpec::ratio("y", "one"),
            &BootstrapConfig::default(),
        )
        .unwrap();
        let m = naive_delta(&data, &MetricSpec::mean("y"), &BootstrapConfig::default()).unwrap();
        assert!((r.estimate - m.estimate).abs() < 1e-15);
        assert!((r.variance - m.variance).abs() < 1e-15);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn build(t: &[f64], c: &[f64]) -> ExperimentData {
            let mut csv = String::from("unit_id,assignment,y\n");
            for (i, v) in t.iter().enumerate() {
                csv.push_str(&format!("t{i},treatment,{v}\n"));
            }
            for (i, v) in c.iter().enumerate() {
                csv.push_str(&format!("c{i},control,{v}\n"));
            }
            dataset(&csv, &[("y", ColumnKind::Outcome)])
        }

        fn small_vec() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-1e3..1e3f64, 2..20)
        }

        proptest! {
            // Adding a constant to the outcome shifts group values by c and
            // leaves the naive delta unchanged.
            #[test]
            fn translation_equivariance(t in small_vec(), c in small_vec(), shift in -1e3..1e3f64) {
                let base = build(&t, &c);
                let shifted = build(
                    &t.iter().map(|v| v + shift).collect::<Vec<_>>(),
                    &c.iter().map(|v| v + shift).collect::<Vec<_>>(),
                );
                for spec in [MetricSpec::mean("y"), MetricSpec::percentile("y", 0.5).unwrap()] {
                    let m0 = metric_value(&base, &spec, Assignment::Treatment).unwrap();
                    let m1 = metric_value(&shifted, &spec, Assignment::Treatment).unwrap();
                    prop_assert!((m1 - (m0 + shift)).abs() < 1e-9 * (1.0 + m0.abs() + shift.abs()));
                    let d0 = naive_delta(&base, &spec, &BootstrapConfig { resamples: 100, seed: 5 }).unwrap();
                    let d1 = naive_delta(&shifted, &spec, &BootstrapConfig { resamples: 100, seed: 5 }).unwrap();
                    prop_assert!((d1.estimate - d0.estimate).abs() < 1e-9 * (1.0 + d0.estimate.abs() + shift.abs()));
                }
            }

            // Scaling outcomes by k > 0 scales the estimate by k and the
            // variance by k^2.
            #[test]
            fn scale_equivariance(t in small_vec(), c in small_vec(), k in 0.01..100.0f64) {
                let base = build(&t, &c);
                let scaled = build(
                    &t.iter().map(|v| v * k).collect::<Vec<_>>(),
                    &c.iter().map(|v| v * k).collect::<Vec<_>>(),
                );
                for spec in [MetricSpec::mean("y"), MetricSpec::percentile("y", 0.3).unwrap()] {
                    let boot = BootstrapConfig { resamples: 100, seed: 11 };
                    let d0 = naive_delta(&base, &spec, &boot).unwrap();
                    let d1 = naive_delta(&scaled, &spec, &boot).unwrap();
                    let scale = 1.0 + d0.estimate.abs() * k;
                    prop_assert!((d1.estimate - k * d0.estimate).abs() < 1e-6 * scale);
                    let vscale = 1.0 + d0.variance * k * k;
                    prop_assert!((d1.variance - k * k * d0.variance).abs() < 1e-6 * vscale);
                }
            }
        }
    }
}
