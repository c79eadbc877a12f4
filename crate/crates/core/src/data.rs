//! Experiment data representation, validation, and file ingestion.
//!
//! Two shapes of input exist: unit-level records (one row per randomized
//! unit, CSV interchange) and experiment-level decomposed-delta records
//! (one entry per experiment with a 2-vector estimate and its known 2x2
//! noise covariance, JSON interchange). All types are immutable after
//! construction; loaders are pure functions of file contents.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::linalg::Mat2;

/// Treatment-group membership of a unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Treatment,
    Control,
}

impl Assignment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Assignment::Treatment => "treatment",
            Assignment::Control => "control",
        }
    }

    /// Parse the CSV encoding: the literal strings, case-insensitive.
    /// Numeric codings are deliberately rejected.
    pub fn parse(s: &str) -> Option<Assignment> {
        if s.eq_ignore_ascii_case("treatment") {
            Some(Assignment::Treatment)
        } else if s.eq_ignore_ascii_case("control") {
            Some(Assignment::Control)
        } else {
            None
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Role of a metric column within an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Outcome,
    PrePeriod,
    Numerator,
    Denominator,
    Component,
}

impl ColumnKind {
    pub fn parse(s: &str) -> Option<ColumnKind> {
        match s {
            "outcome" => Some(ColumnKind::Outcome),
            "pre_period" => Some(ColumnKind::PrePeriod),
            "numerator" => Some(ColumnKind::Numerator),
            "denominator" => Some(ColumnKind::Denominator),
            "component" => Some(ColumnKind::Component),
            _ => None,
        }
    }
}

/// Ordered column-name -> kind map. Order defines the CSV column layout.
pub type ColumnSchema = IndexMap<String, ColumnKind>;

/// Errors raised by validation and ingestion. Every malformed input maps to
/// exactly one of these; loads never return partially validated data.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("unexpected column not in schema: {0}")]
    UnexpectedColumn(String),
    #[error(
        "invalid assignment value {value:?} in row {row} (expected \"treatment\" or \"control\")"
    )]
    InvalidAssignment { row: usize, value: String },
    #[error("non-finite value in row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },
    #[error("empty group: {0}")]
    EmptyGroup(Assignment),
    #[error("duplicate unit_id: {0}")]
    DuplicateUnitId(String),
    #[error("malformed record at index {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("sigma is not positive semidefinite for experiment {experiment_id}")]
    NotPositiveSemidefinite { experiment_id: String },
}

/// One unit-level row: id, assignment, and a value for every schema column.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub assignment: Assignment,
    pub values: IndexMap<String, f64>,
}

/// Validated unit-level data for a single experiment.
///
/// Stored column-major so metric and moment computations stream over
/// contiguous slices; `units` views are materialized on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    experiment_id: String,
    schema: ColumnSchema,
    unit_ids: Vec<String>,
    assignments: Vec<Assignment>,
    columns: IndexMap<String, Vec<f64>>,
    treatment_rows: Vec<usize>,
    control_rows: Vec<usize>,
}

impl ExperimentData {
    /// Build from row-shaped records, validating every invariant.
    pub fn from_units(
        experiment_id: impl Into<String>,
        schema: ColumnSchema,
        units: Vec<UnitRecord>,
    ) -> Result<Self, DataError> {
        let mut unit_ids = Vec::with_capacity(units.len());
        let mut assignments = Vec::with_capacity(units.len());
        let mut columns: IndexMap<String, Vec<f64>> = schema
            .keys()
            .map(|k| (k.clone(), Vec::with_capacity(units.len())))
            .collect();
        for unit in &units {
            for key in unit.values.keys() {
                if !schema.contains_key(key) {
                    return Err(DataError::UnexpectedColumn(key.clone()));
                }
            }
            for col in schema.keys() {
                let v = *unit
                    .values
                    .get(col)
                    .ok_or_else(|| DataError::MissingColumn(col.clone()))?;
                columns.get_mut(col).unwrap().push(v);
            }
            unit_ids.push(unit.unit_id.clone());
            assignments.push(unit.assignment);
        }
        Self::from_columns(experiment_id, schema, unit_ids, assignments, columns)
    }

    /// Build from column-shaped data, validating every invariant.
    pub fn from_columns(
        experiment_id: impl Into<String>,
        schema: ColumnSchema,
        unit_ids: Vec<String>,
        assignments: Vec<Assignment>,
        columns: IndexMap<String, Vec<f64>>,
    ) -> Result<Self, DataError> {
        let n = unit_ids.len();
        if assignments.len() != n {
            return Err(DataError::MalformedRecord {
                index: 0,
                reason: format!("{} assignments for {} unit ids", assignments.len(), n),
            });
        }
        for col in schema.keys() {
            match columns.get(col) {
                None => return Err(DataError::MissingColumn(col.clone())),
                Some(vals) if vals.len() != n => {
                    return Err(DataError::MalformedRecord {
                        index: 0,
                        reason: format!("column {col} has {} values for {n} units", vals.len()),
                    })
                }
                Some(_) => {}
            }
        }
        for col in columns.keys() {
            if !schema.contains_key(col) {
                return Err(DataError::UnexpectedColumn(col.clone()));
            }
        }
        for (col, vals) in &columns {
            if let Some(row) = vals.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteValue {
                    row: row + 1,
                    column: col.clone(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateUnitId(id.clone()));
            }
        }
        let treatment_rows: Vec<usize> = assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Assignment::Treatment)
            .map(|(i, _)| i)
            .collect();
        let control_rows: Vec<usize> = assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Assignment::Control)
            .map(|(i, _)| i)
            .collect();
        if treatment_rows.is_empty() {
            return Err(DataError::EmptyGroup(Assignment::Treatment));
        }
        if control_rows.is_empty() {
            return Err(DataError::EmptyGroup(Assignment::Control));
        }
        // Order columns to match the schema.
        let columns: IndexMap<String, Vec<f64>> = schema
            .keys()
            .map(|k| (k.clone(), columns[k].clone()))
            .collect();
        Ok(ExperimentData {
            experiment_id: experiment_id.into(),
            schema,
            unit_ids,
            assignments,
            columns,
            treatment_rows,
            control_rows,
        })
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_group(&self, group: Assignment) -> usize {
        self.group_rows(group).len()
    }

    /// Row indices of a group, in original row order.
    pub fn group_rows(&self, group: Assignment) -> &[usize] {
        match group {
            Assignment::Treatment => &self.treatment_rows,
            Assignment::Control => &self.control_rows,
        }
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.columns
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn column_kind(&self, name: &str) -> Option<ColumnKind> {
        self.schema.get(name).copied()
    }

    /// Values of a column restricted to one group, in row order.
    pub fn group_column(&self, name: &str, group: Assignment) -> Result<Vec<f64>, DataError> {
        let col = self.column(name)?;
        Ok(self.group_rows(group).iter().map(|&i| col[i]).collect())
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Materialize row views (used by serialization and round-trip tests).
    pub fn units(&self) -> Vec<UnitRecord> {
        (0..self.n_units())
            .map(|i| UnitRecord {
                unit_id: self.unit_ids[i].clone(),
                assignment: self.assignments[i],
                values: self
                    .columns
                    .iter()
                    .map(|(k, v)| (k.clone(), v[i]))
                    .collect(),
            })
            .collect()
    }

    /// Write unit-level CSV: `unit_id, assignment, <metric columns...>`.
    /// Floats use the shortest round-trippable representation, so a write
    /// followed by [`load_unit_csv`] reproduces values bit-exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["unit_id".to_string(), "assignment".to_string()];
        header.extend(self.schema.keys().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n_units() {
            let mut row = vec![self.unit_ids[i].clone(), self.assignments[i].to_string()];
            for col in self.columns.values() {
                row.push(format!("{}", col[i]));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}

/// Load a unit-level CSV against a declared schema.
///
/// The header must contain `unit_id`, `assignment`, and exactly the schema
/// columns; row order is preserved.
pub fn load_unit_csv(
    path: impl AsRef<Path>,
    schema: &ColumnSchema,
) -> Result<ExperimentData, DataError> {
    let path = path.as_ref();
    let experiment_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".to_string());
    let file = std::fs::File::open(path)?;
    read_unit_csv(file, experiment_id, schema)
}

/// CSV reader backing [`load_unit_csv`]; exposed for in-memory sources.
pub fn read_unit_csv<R: Read>(
    reader: R,
    experiment_id: impl Into<String>,
    schema: &ColumnSchema,
) -> Result<ExperimentData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();

    let find = |want: &str| names.iter().position(|h| h == want);
    let id_idx = find("unit_id").ok_or_else(|| DataError::MissingColumn("unit_id".into()))?;
    let asg_idx =
        find("assignment").ok_or_else(|| DataError::MissingColumn("assignment".into()))?;
    let mut col_idx: Vec<(String, usize)> = Vec::with_capacity(schema.len());
    for col in schema.keys() {
        let idx = find(col).ok_or_else(|| DataError::MissingColumn(col.clone()))?;
        col_idx.push((col.clone(), idx));
    }
    for (i, name) in names.iter().enumerate() {
        if i != id_idx && i != asg_idx && !schema.contains_key(name) {
            return Err(DataError::UnexpectedColumn(name.clone()));
        }
    }

    let mut unit_ids = Vec::new();
    let mut assignments = Vec::new();
    let mut columns: IndexMap<String, Vec<f64>> =
        schema.keys().map(|k| (k.clone(), Vec::new())).collect();
    for (row_i, record) in rdr.records().enumerate() {
        let row = row_i + 1; // 1-based data rows in error messages
        let record = record?;
        let raw_asg = record.get(asg_idx).unwrap_or("").trim();
        let assignment =
            Assignment::parse(raw_asg).ok_or_else(|| DataError::InvalidAssignment {
                row,
                value: raw_asg.to_string(),
            })?;
        unit_ids.push(record.get(id_idx).unwrap_or("").trim().to_string());
        assignments.push(assignment);
        for (col, idx) in &col_idx {
            let raw = record.get(*idx).unwrap_or("").trim();
            let value: f64 = raw.parse().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(DataError::NonFiniteValue {
                    row,
                    column: col.clone(),
                });
            }
            columns.get_mut(col).unwrap().push(value);
        }
    }
    ExperimentData::from_columns(
        experiment_id,
        schema.clone(),
        unit_ids,
        assignments,
        columns,
    )
}

/// Relative tolerance below which sigma asymmetry is treated as
/// serialization noise and averaged away; anything larger is rejected.
const SIGMA_ASYMMETRY_REL_TOL: f64 = 1e-8;

/// Eigenvalues of sigma may undershoot zero by at most this before the
/// record is rejected; smaller negative parts are clipped.
const SIGMA_PSD_TOL: f64 = 1e-10;

/// One experiment-level observation: the decomposed estimate (d1, d2) and
/// its known noise covariance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecomposedDeltaRecord {
    pub experiment_id: String,
    pub delta: [f64; 2],
    pub sigma: Mat2,
}

impl DecomposedDeltaRecord {
    /// Validate and normalize a raw record: sigma is symmetrized as
    /// (S + S')/2 when the asymmetry is within tolerance, then checked PSD
    /// (eigenvalues >= -1e-10 before cleanup, >= 0 after).
    pub fn new(
        experiment_id: impl Into<String>,
        delta: [f64; 2],
        sigma: [[f64; 2]; 2],
    ) -> Result<Self, DataError> {
        let experiment_id = experiment_id.into();
        let raw = Mat2(sigma);
        if !delta.iter().all(|v| v.is_finite()) || !raw.is_finite() {
            return Err(DataError::MalformedRecord {
                index: 0,
                reason: format!("non-finite entries in record {experiment_id}"),
            });
        }
        if raw.asymmetry() > SIGMA_ASYMMETRY_REL_TOL * raw.max_abs() {
            return Err(DataError::MalformedRecord {
                index: 0,
                reason: format!(
                    "sigma for {experiment_id} is asymmetric beyond tolerance \
                     (|s12 - s21| = {})",
                    raw.asymmetry()
                ),
            });
        }
        let sym = raw.symmetrize();
        let [lo, _] = sym.sym_eigenvalues();
        if lo < -SIGMA_PSD_TOL {
            return Err(DataError::NotPositiveSemidefinite { experiment_id });
        }
        let sigma = if lo < 0.0 { sym.psd_project() } else { sym };
        Ok(DecomposedDeltaRecord {
            experiment_id,
            delta,
            sigma,
        })
    }
}

#[derive(Deserialize)]
struct RawDecomposed {
    experiment_id: String,
    delta: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

/// Load a decomposed-delta JSON file:
/// `[{"experiment_id": "...", "delta": [d1, d2], "sigma": [[a,b],[b,c]]}, ...]`.
pub fn load_decomposed_json(
    path: impl AsRef<Path>,
) -> Result<Vec<DecomposedDeltaRecord>, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_decomposed_json(&text)
}

pub fn parse_decomposed_json(text: &str) -> Result<Vec<DecomposedDeltaRecord>, DataError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DataError::MalformedRecord {
            index: 0,
            reason: format!("invalid JSON: {e}"),
        })?;
    let array = value.as_array().ok_or_else(|| DataError::MalformedRecord {
        index: 0,
        reason: "expected a top-level JSON array".to_string(),
    })?;
    let mut records = Vec::with_capacity(array.len());
    for (index, item) in array.iter().enumerate() {
        let raw: RawDecomposed =
            serde_json::from_value(item.clone()).map_err(|e| DataError::MalformedRecord {
                index,
                reason: e.to_string(),
            })?;
        if raw.delta.len() != 2 {
            return Err(DataError::MalformedRecord {
                index,
                reason: format!("delta must have length 2, got {}", raw.delta.len()),
            });
        }
        if raw.sigma.len() != 2 || raw.sigma.iter().any(|r| r.len() != 2) {
            return Err(DataError::MalformedRecord {
                index,
                reason: "sigma must be a 2x2 nested array".to_string(),
            });
        }
        let sigma = [
            [raw.sigma[0][0], raw.sigma[0][1]],
            [raw.sigma[1][0], raw.sigma[1][1]],
        ];
        let record =
            DecomposedDeltaRecord::new(raw.experiment_id, [raw.delta[0], raw.delta[1]], sigma)
                .map_err(|e| match e {
                    DataError::MalformedRecord { reason, .. } => {
                        DataError::MalformedRecord { index, reason }
                    }
                    other => other,
                })?;
        records.push(record);
    }
    Ok(records)
}

/// Serialize decomposed records in the same JSON shape the loader accepts.
pub fn write_decomposed_json<W: Write>(
    records: &[DecomposedDeltaRecord],
    mut w: W,
) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}
