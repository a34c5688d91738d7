//! Model metadata, benchmark tables and downstream targets.
//!
//! On disk everything is CSV. Model sizes are written in billions of
//! parameters, trillions of tokens and units of 1e21 FLOPs, and converted to
//! absolute counts at load time. Benchmark values are stored in accuracy
//! orientation; metrics declared as error-oriented are flipped (`1 - E`) when
//! loaded and flipped back when written.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REFERENCE_MODEL: &str = "Llama-2-7b-hf";
pub const DEFAULT_REFERENCE_FAMILY: &str = "Llama-2";

const PARAMS_UNIT: f64 = 1e9;
const TOKENS_UNIT: f64 = 1e12;
const FLOPS_UNIT: f64 = 1e21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub family: String,
    /// Absolute parameter count.
    pub params: Option<f64>,
    /// Absolute pretraining token count.
    pub tokens: Option<f64>,
    /// Absolute training FLOPs.
    pub flops: Option<f64>,
}

impl ModelRecord {
    /// Builds a record, deriving FLOPs as `6 · N · D` when absent and derivable.
    pub fn new(
        model_id: impl Into<String>,
        family: impl Into<String>,
        params: Option<f64>,
        tokens: Option<f64>,
        flops: Option<f64>,
    ) -> Result<Self> {
        let rec = ModelRecord {
            model_id: model_id.into(),
            family: family.into(),
            params,
            tokens,
            flops: flops.or_else(|| Some(6.0 * params? * tokens?)),
        };
        for (name, v) in [("params", rec.params), ("tokens", rec.tokens), ("flops", rec.flops)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::validation(format!(
                        "model `{}`: {name} must be strictly positive, got {v}",
                        rec.model_id
                    )));
                }
            }
        }
        Ok(rec)
    }

    pub fn log10_flops(&self) -> Option<f64> {
        self.flops.map(f64::log10)
    }

    pub fn log10_params(&self) -> Option<f64> {
        self.params.map(f64::log10)
    }
}

fn read_path(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(s)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Parses an optional cell: empty or `-` means unknown.
fn parse_cell(origin: &str, row: usize, column: &str, raw: &str) -> Result<Option<f64>> {
    if raw.is_empty() || raw == "-" {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            origin: origin.to_string(),
            row,
            column: column.to_string(),
            message: format!("`{raw}` is not a number"),
        }),
    }
}

fn header_index(origin: &str, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        origin: origin.to_string(),
        row: 1,
        column: name.to_string(),
        message: "missing required column".into(),
    })
}

pub fn load_models(path: impl AsRef<Path>) -> Result<Vec<ModelRecord>> {
    let path = path.as_ref();
    parse_models(&read_path(path)?, &path.display().to_string())
}

/// Parses a models CSV (`model_id,family,params_b,tokens_t,flops_1e21`).
pub fn parse_models(text: &str, origin: &str) -> Result<Vec<ModelRecord>> {
    let mut rdr = csv_reader(text);
    let csv_err = |source| Error::Csv {
        origin: origin.to_string(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = ["model_id", "family", "params_b", "tokens_t", "flops_1e21"]
        .iter()
        .map(|c| header_index(origin, &headers, c))
        .collect::<Result<_>>()?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        let field = |c: usize| rec.get(cols[c]).unwrap_or("");
        let model_id = field(0);
        if model_id.is_empty() {
            return Err(Error::Parse {
                origin: origin.to_string(),
                row,
                column: "model_id".into(),
                message: "empty model id".into(),
            });
        }
        let scaled = |c: usize, name: &str, unit: f64| -> Result<Option<f64>> {
            let v = parse_cell(origin, row, name, field(c))?;
            if let Some(v) = v {
                if v <= 0.0 {
                    return Err(Error::Parse {
                        origin: origin.to_string(),
                        row,
                        column: name.to_string(),
                        message: format!("{v} is not strictly positive"),
                    });
                }
            }
            Ok(v.map(|v| v * unit))
        };
        let params = scaled(2, "params_b", PARAMS_UNIT)?;
        let tokens = scaled(3, "tokens_t", TOKENS_UNIT)?;
        let flops = scaled(4, "flops_1e21", FLOPS_UNIT)?;
        if !seen.insert(model_id.to_string()) {
            return Err(Error::DuplicateModel(model_id.to_string()));
        }
        out.push(ModelRecord::new(model_id, field(1), params, tokens, flops)?);
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>, unit: f64) -> String {
    v.map(|v| format!("{}", v / unit)).unwrap_or_default()
}

pub fn write_models<W: Write>(models: &[ModelRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |source| Error::Csv {
        origin: "models output".into(),
        source,
    };
    wtr.write_record(["model_id", "family", "params_b", "tokens_t", "flops_1e21"])
        .map_err(err)?;
    for m in models {
        wtr.write_record([
            m.model_id.clone(),
            m.family.clone(),
            fmt_opt(m.params, PARAMS_UNIT),
            fmt_opt(m.tokens, TOKENS_UNIT),
            fmt_opt(m.flops, FLOPS_UNIT),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "models output".into(),
        source,
    })
}

/// FLOPs of the reference model used as the default weak/strong cutoff.
pub fn flops_cutoff_default(models: &[ModelRecord], reference: &str) -> Result<f64> {
    let m = models
        .iter()
        .find(|m| m.model_id == reference)
        .ok_or_else(|| Error::Config(format!("reference model `{reference}` not in dataset")))?;
    m.flops
        .ok_or_else(|| Error::Config(format!("reference model `{reference}` has unknown FLOPs")))
}

/// Families in order of first appearance.
pub fn families(models: &[ModelRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    models
        .iter()
        .filter(|m| seen.insert(m.family.as_str()))
        .map(|m| m.family.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Accuracy,
    Error,
}

/// Models × metrics matrix of scores in `[0, 1]` with explicit missing cells.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkTable {
    model_ids: Vec<String>,
    metric_names: Vec<String>,
    orientation: Vec<Orientation>,
    values: Vec<Option<f64>>,
}

impl BenchmarkTable {
    /// Builds a table from accuracy-oriented rows.
    pub fn new(
        model_ids: Vec<String>,
        metric_names: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let orientation = vec![Orientation::Accuracy; metric_names.len()];
        Self::with_orientation(model_ids, metric_names, orientation, rows)
    }

    fn with_orientation(
        model_ids: Vec<String>,
        metric_names: Vec<String>,
        orientation: Vec<Orientation>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if rows.len() != model_ids.len() {
            return Err(Error::validation(format!(
                "{} rows for {} model ids",
                rows.len(),
                model_ids.len()
            )));
        }
        check_unique(&model_ids, "model id")?;
        check_unique(&metric_names, "metric")?;
        let t = metric_names.len();
        let mut values = Vec::with_capacity(rows.len() * t);
        for (id, row) in model_ids.iter().zip(rows) {
            if row.len() != t {
                return Err(Error::validation(format!(
                    "row `{id}` has {} values for {t} metrics",
                    row.len()
                )));
            }
            for (name, v) in metric_names.iter().zip(&row) {
                if let Some(v) = v {
                    if !(0.0..=1.0).contains(v) {
                        return Err(Error::validation(format!(
                            "`{id}` / `{name}` = {v} is outside [0, 1]"
                        )));
                    }
                }
            }
            values.extend(row);
        }
        Ok(BenchmarkTable {
            model_ids,
            metric_names,
            orientation,
            values,
        })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn orientation(&self) -> &[Orientation] {
        &self.orientation
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.n_metrics() + col]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let t = self.n_metrics();
        &self.values[row * t..(row + 1) * t]
    }

    pub fn row_of(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model_id)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.missing_count() as f64 / self.values.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Keeps the given models, in the given order.
    pub fn select_rows<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut missing = Vec::new();
        let mut rows = Vec::new();
        for id in ids {
            match self.row_of(id.as_ref()) {
                Some(r) => rows.push(self.row(r).to_vec()),
                None => missing.push(id.as_ref().to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnknownModels(missing));
        }
        Self::with_orientation(
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
            self.metric_names.clone(),
            self.orientation.clone(),
            rows,
        )
    }

    /// Drops the named metrics; names not present are ignored.
    pub fn without_metrics<S: AsRef<str>>(&self, names: &[S]) -> Self {
        let keep: Vec<usize> = (0..self.n_metrics())
            .filter(|&j| !names.iter().any(|n| n.as_ref() == self.metric_names[j]))
            .collect();
        let rows = (0..self.n_models())
            .map(|i| keep.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        Self::with_orientation(
            self.model_ids.clone(),
            keep.iter().map(|&j| self.metric_names[j].clone()).collect(),
            keep.iter().map(|&j| self.orientation[j]).collect(),
            rows,
        )
        .expect("subset of a valid table is valid")
    }

    /// Converts to a dense table; fails if any cell is missing.
    pub fn to_complete(&self) -> Result<CompleteTable> {
        if let Some(idx) = self.values.iter().position(Option::is_none) {
            let t = self.n_metrics();
            return Err(Error::validation(format!(
                "table has missing cells (first at `{}` / `{}`); impute first",
                self.model_ids[idx / t],
                self.metric_names[idx % t]
            )));
        }
        let m = DMatrix::from_fn(self.n_models(), self.n_metrics(), |i, j| {
            self.get(i, j).unwrap()
        });
        CompleteTable::new(self.model_ids.clone(), self.metric_names.clone(), m)
    }

    /// Writes the table in its source orientation. Missing cells are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |source| Error::Csv {
            origin: "benchmarks output".into(),
            source,
        };
        let mut header = vec!["model_id".to_string()];
        header.extend(self.metric_names.iter().cloned());
        wtr.write_record(&header).map_err(err)?;
        for i in 0..self.n_models() {
            let mut rec = vec![self.model_ids[i].clone()];
            for j in 0..self.n_metrics() {
                rec.push(match (self.get(i, j), self.orientation[j]) {
                    (None, _) => String::new(),
                    (Some(v), Orientation::Accuracy) => format!("{v}"),
                    (Some(v), Orientation::Error) => format!("{}", 1.0 - v),
                });
            }
            wtr.write_record(&rec).map_err(err)?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: "benchmarks output".into(),
            source,
        })
    }
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(if what == "model id" {
                Error::DuplicateModel(n.clone())
            } else {
                Error::validation(format!("duplicate {what} `{n}`"))
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkOptions {
    /// Metrics whose file values are errors `E`; stored as `1 - E`.
    pub error_metrics: Vec<String>,
}

pub fn load_benchmarks(path: impl AsRef<Path>, models: &[ModelRecord]) -> Result<BenchmarkTable> {
    load_benchmarks_with(path, models, &BenchmarkOptions::default())
}

pub fn load_benchmarks_with(
    path: impl AsRef<Path>,
    models: &[ModelRecord],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkTable> {
    let path = path.as_ref();
    parse_benchmarks(&read_path(path)?, &path.display().to_string(), models, opts)
}

/// Parses a benchmarks CSV: `model_id` followed by one column per metric.
pub fn parse_benchmarks(
    text: &str,
    origin: &str,
    models: &[ModelRecord],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkTable> {
    let mut rdr = csv_reader(text);
    let csv_err = |source| Error::Csv {
        origin: origin.to_string(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("model_id") {
        return Err(Error::Parse {
            origin: origin.into(),
            row: 1,
            column: headers.get(0).unwrap_or("").into(),
            message: "first column must be `model_id`".into(),
        });
    }
    let metric_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let orientation: Vec<Orientation> = metric_names
        .iter()
        .map(|m| {
            if opts.error_metrics.iter().any(|e| e == m) {
                Orientation::Error
            } else {
                Orientation::Accuracy
            }
        })
        .collect();

    let known: HashSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
    let mut unknown = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        let id = rec.get(0).unwrap_or("").to_string();
        if !known.contains(id.as_str()) {
            unknown.push(id);
            continue;
        }
        let mut vals = Vec::with_capacity(metric_names.len());
        for (j, name) in metric_names.iter().enumerate() {
            let v = parse_cell(origin, row, name, rec.get(j + 1).unwrap_or(""))?;
            if let Some(x) = v {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::validation(format!(
                        "{origin}: row {row}, column `{name}`: {x} is outside [0, 1]"
                    )));
                }
            }
            vals.push(match orientation[j] {
                Orientation::Accuracy => v,
                Orientation::Error => v.map(|e| 1.0 - e),
            });
        }
        ids.push(id);
        rows.push(vals);
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownModels(unknown));
    }
    BenchmarkTable::with_orientation(ids, metric_names, orientation, rows)
}

/// A benchmark table with every cell present, as a dense `models × metrics` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CompleteTable {
    model_ids: Vec<String>,
    metric_names: Vec<String>,
    values: DMatrix<f64>,
}

impl CompleteTable {
    pub fn new(model_ids: Vec<String>, metric_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (model_ids.len(), metric_names.len()) {
            return Err(Error::validation(format!(
                "matrix is {:?} but table is {}×{}",
                values.shape(),
                model_ids.len(),
                metric_names.len()
            )));
        }
        check_unique(&model_ids, "model id")?;
        check_unique(&metric_names, "metric")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite benchmark value"));
        }
        Ok(CompleteTable {
            model_ids,
            metric_names,
            values,
        })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    /// The value matrix with columns reordered to `names`.
    pub fn aligned_to(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let mismatch = || Error::MetricMismatch {
            expected: names.to_vec(),
            found: self.metric_names.clone(),
        };
        if names.len() != self.metric_names.len() {
            return Err(mismatch());
        }
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.metric_names.iter().position(|m| m == n).ok_or_else(mismatch))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.n_models(), idx.len(), |i, j| {
            self.values[(i, idx[j])]
        }))
    }

    pub fn select_rows<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .model_ids
            .iter()
            .enumerate()
            .map(|(i, m)| (m.as_str(), i))
            .collect();
        let mut missing = Vec::new();
        let rows: Vec<usize> = ids
            .iter()
            .filter_map(|id| {
                let r = index.get(id.as_ref()).copied();
                if r.is_none() {
                    missing.push(id.as_ref().to_string());
                }
                r
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownModels(missing));
        }
        let m = DMatrix::from_fn(rows.len(), self.metric_names.len(), |i, j| {
            self.values[(rows[i], j)]
        });
        Self::new(
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
            self.metric_names.clone(),
            m,
        )
    }

    pub fn to_table(&self) -> BenchmarkTable {
        let rows = (0..self.n_models())
            .map(|i| self.values.row(i).iter().map(|v| Some(*v)).collect())
            .collect();
        BenchmarkTable::new(self.model_ids.clone(), self.metric_names.clone(), rows)
            .expect("complete table values are in range")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub model_id: String,
    pub value: Option<f64>,
    /// Random-chance floor; the normalized value is `(value - floor) / (1 - floor)`.
    pub floor: f64,
}

/// A downstream metric in accuracy orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetric {
    pub name: String,
    entries: Vec<TargetEntry>,
}

impl TargetMetric {
    pub fn new(name: impl Into<String>, entries: Vec<TargetEntry>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.model_id.as_str()) {
                return Err(Error::DuplicateModel(e.model_id.clone()));
            }
            if !(0.0..1.0).contains(&e.floor) {
                return Err(Error::validation(format!(
                    "target `{name}`, model `{}`: floor {} outside [0, 1)",
                    e.model_id, e.floor
                )));
            }
            if let Some(v) = e.value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "target `{name}`, model `{}`: value {v} outside [0, 1]",
                        e.model_id
                    )));
                }
                if v < e.floor {
                    return Err(Error::validation(format!(
                        "target `{name}`, model `{}`: value {v} below floor {}",
                        e.model_id, e.floor
                    )));
                }
            }
        }
        Ok(TargetMetric { name, entries })
    }

    /// Target with zero floors from `(model_id, value)` pairs.
    pub fn from_values<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Self> {
        let entries = values
            .into_iter()
            .map(|(id, v)| TargetEntry {
                model_id: id.into(),
                value: Some(v),
                floor: 0.0,
            })
            .collect();
        Self::new(name, entries)
    }

    pub fn entries(&self) -> &[TargetEntry] {
        &self.entries
    }

    fn entry(&self, model_id: &str) -> Option<&TargetEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }

    pub fn value(&self, model_id: &str) -> Option<f64> {
        self.entry(model_id).and_then(|e| e.value)
    }

    /// Floor-normalized value in `[0, 1]`.
    pub fn normalized(&self, model_id: &str) -> Option<f64> {
        self.entry(model_id)
            .and_then(|e| e.value.map(|v| (v - e.floor) / (1.0 - e.floor)))
    }

    /// Ids with a present value, in entry order.
    pub fn labeled_ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.value.is_some())
            .map(|e| e.model_id.clone())
            .collect()
    }

    /// Keeps only entries for `ids`.
    pub fn restricted<S: AsRef<str>>(&self, ids: &[S]) -> Self {
        let keep: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        TargetMetric {
            name: self.name.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(e.model_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Clears values for every model not in `ids`.
    pub fn masked_except<S: AsRef<str>>(&self, ids: &[S]) -> Self {
        let keep: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        TargetMetric {
            name: self.name.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| TargetEntry {
                    value: e.value.filter(|_| keep.contains(e.model_id.as_str())),
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// Loads `model_id,value,floor`; the target is named after the file stem.
pub fn load_targets(path: impl AsRef<Path>, models: &[ModelRecord]) -> Result<TargetMetric> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "target".into());
    parse_targets(&read_path(path)?, &path.display().to_string(), &name, models)
}

pub fn parse_targets(text: &str, origin: &str, name: &str, models: &[ModelRecord]) -> Result<TargetMetric> {
    let mut rdr = csv_reader(text);
    let csv_err = |source| Error::Csv {
        origin: origin.to_string(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let id_col = header_index(origin, &headers, "model_id")?;
    let value_col = header_index(origin, &headers, "value")?;
    let floor_col = headers.iter().position(|h| h == "floor");
    let known: HashSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
    let mut unknown = Vec::new();
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if !known.contains(id.as_str()) {
            unknown.push(id);
            continue;
        }
        let value = parse_cell(origin, row, "value", rec.get(value_col).unwrap_or(""))?;
        let floor = match floor_col {
            Some(c) => parse_cell(origin, row, "floor", rec.get(c).unwrap_or(""))?.unwrap_or(0.0),
            None => 0.0,
        };
        entries.push(TargetEntry {
            model_id: id,
            value,
            floor,
        });
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownModels(unknown));
    }
    TargetMetric::new(name, entries)
}

pub fn write_targets<W: Write>(target: &TargetMetric, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |source| Error::Csv {
        origin: "targets output".into(),
        source,
    };
    wtr.write_record(["model_id", "value", "floor"]).map_err(err)?;
    for e in &target.entries {
        wtr.write_record([
            e.model_id.clone(),
            e.value.map(|v| v.to_string()).unwrap_or_default(),
            e.floor.to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "targets output".into(),
        source,
    })
}

/// Everything a scaling fit sees: model metadata, base benchmarks and one target.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub models: Vec<ModelRecord>,
    pub benchmarks: BenchmarkTable,
    pub target: TargetMetric,
}

impl Dataset {
    pub fn new(models: Vec<ModelRecord>, benchmarks: BenchmarkTable, target: TargetMetric) -> Result<Self> {
        let known: HashSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
        let unknown: Vec<String> = benchmarks
            .model_ids()
            .iter()
            .chain(target.entries().iter().map(|e| &e.model_id))
            .filter(|id| !known.contains(id.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownModels(unknown));
        }
        Ok(Dataset {
            models,
            benchmarks,
            target,
        })
    }

    pub fn model(&self, id: &str) -> Option<&ModelRecord> {
        self.models.iter().find(|m| m.model_id == id)
    }

    /// Restricts models, benchmark rows and target entries to `ids`.
    ///
    /// Ids without benchmark rows are dropped from the benchmark table.
    pub fn restricted<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let keep: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let models: Vec<ModelRecord> = self
            .models
            .iter()
            .filter(|m| keep.contains(m.model_id.as_str()))
            .cloned()
            .collect();
        let rows: Vec<&String> = self
            .benchmarks
            .model_ids()
            .iter()
            .filter(|m| keep.contains(m.as_str()))
            .collect();
        Ok(Dataset {
            benchmarks: self.benchmarks.select_rows(&rows)?,
            target: self.target.restricted(ids),
            models,
        })
    }

    /// Models that have both a benchmark row and a target value.
    pub fn labeled_ids(&self) -> Vec<String> {
        self.target
            .labeled_ids()
            .into_iter()
            .filter(|id| self.benchmarks.row_of(id).is_some())
            .collect()
    }

    /// SHA-256 over the canonical CSV serialization of all three tables.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_models(&self.models, &mut buf)?;
        self.benchmarks.write_csv(&mut buf)?;
        write_targets(&self.target, &mut buf)?;
        let digest = Sha256::digest(&buf);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Tables bundled with the crate, transcribed from the published model
/// collection: 77 pretrained base models and 27 instruction-tuned models.
pub mod bundled {
    use super::*;

    pub const BASE_MODELS_CSV: &str = include_str!("../data/base_models.csv");
    pub const BASE_BENCHMARKS_CSV: &str = include_str!("../data/base_benchmarks.csv");
    pub const INSTRUCT_MODELS_CSV: &str = include_str!("../data/instruct_models.csv");
    pub const INSTRUCT_BENCHMARKS_CSV: &str = include_str!("../data/instruct_benchmarks.csv");

    pub fn base_models() -> Vec<ModelRecord> {
        parse_models(BASE_MODELS_CSV, "bundled base_models.csv").expect("bundled data is valid")
    }

    pub fn base_benchmarks() -> BenchmarkTable {
        parse_benchmarks(
            BASE_BENCHMARKS_CSV,
            "bundled base_benchmarks.csv",
            &base_models(),
            &BenchmarkOptions::default(),
        )
        .expect("bundled data is valid")
    }

    pub fn instruct_models() -> Vec<ModelRecord> {
        parse_models(INSTRUCT_MODELS_CSV, "bundled instruct_models.csv").expect("bundled data is valid")
    }

    pub fn instruct_benchmarks() -> BenchmarkTable {
        parse_benchmarks(
            INSTRUCT_BENCHMARKS_CSV,
            "bundled instruct_benchmarks.csv",
            &instruct_models(),
            &BenchmarkOptions::default(),
        )
        .expect("bundled data is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "model_id,family,params_b,tokens_t,flops_1e21\n";

    #[test]
    fn derives_flops_from_params_and_tokens() {
        let m = parse_models(&format!("{HEADER}Llama-2-7b,Llama-2,7,2,\n"), "t").unwrap();
        assert_eq!(m[0].flops, Some(8.4e22));
        assert_eq!(m[0].params, Some(7e9));
    }

    #[test]
    fn unit_row_gives_six_flops() {
        let m = parse_models(&format!("{HEADER}tiny,x,1e-9,1e-12,\n"), "t").unwrap();
        let f = m[0].flops.unwrap();
        assert!((f - 6.0).abs() <= 6.0 * f64::EPSILON * 4.0, "{f}");
        let direct = ModelRecord::new("u", "x", Some(1.0), Some(1.0), None).unwrap();
        assert_eq!(direct.flops, Some(6.0));
    }

    #[test]
    fn unknown_tokens_leave_flops_unknown() {
        let m = parse_models(&format!("{HEADER}Mistral-7B-v0.1,Mistral,7.3,,\n"), "t").unwrap();
        assert_eq!(m[0].flops, None);
        assert_eq!(m[0].tokens, None);
    }

    #[test]
    fn malformed_cell_names_row_and_column() {
        let err = parse_models(&format!("{HEADER}a,f,1,2,3\nb,f,abc,2,3\n"), "m.csv").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "params_b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_model_rejected() {
        let err = parse_models(&format!("{HEADER}a,f,1,2,\na,g,1,2,\n"), "t").unwrap_err();
        assert!(matches!(err, Error::DuplicateModel(id) if id == "a"));
    }

    #[test]
    fn nonpositive_size_rejected() {
        assert!(parse_models(&format!("{HEADER}a,f,0,2,\n"), "t").is_err());
    }

    #[test]
    fn benchmark_range_and_unknown_ids() {
        let models = parse_models(&format!("{HEADER}a,f,1,1,\nb,f,2,1,\n"), "t").unwrap();
        let opts = BenchmarkOptions::default();
        let err = parse_benchmarks("model_id,X\na,1.2\n", "b", &models, &opts).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = parse_benchmarks("model_id,X\nzz,0.2\nyy,0.1\n", "b", &models, &opts).unwrap_err();
        assert!(matches!(err, Error::UnknownModels(ids) if ids == ["zz", "yy"]));
    }

    #[test]
    fn empty_cell_is_missing_not_zero() {
        let models = parse_models(&format!("{HEADER}a,f,1,1,\nb,f,2,1,\n"), "t").unwrap();
        let t = parse_benchmarks("model_id,X,Y\na,,0.5\nb,0.25,-\n", "b", &models, &Default::default())
            .unwrap();
        assert_eq!(t.get(0, 0), None);
        assert_eq!(t.get(0, 1), Some(0.5));
        assert_eq!(t.get(1, 1), None);
        assert_eq!(t.missing_count(), 2);
        assert!(t.to_complete().is_err());
    }

    #[test]
    fn error_metrics_flip_orientation() {
        let models = parse_models(&format!("{HEADER}a,f,1,1,\n"), "t").unwrap();
        let opts = BenchmarkOptions {
            error_metrics: vec!["E".into()],
        };
        let t = parse_benchmarks("model_id,E,A\na,0.25,0.25\n", "b", &models, &opts).unwrap();
        assert_eq!(t.get(0, 0), Some(0.75));
        assert_eq!(t.get(0, 1), Some(0.25));
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "model_id,E,A\na,0.25,0.25\n");
    }

    #[test]
    fn targets_validate_floor() {
        let models = parse_models(&format!("{HEADER}a,f,1,1,\nb,f,2,1,\n"), "t").unwrap();
        let t = parse_targets("model_id,value,floor\na,0.5,0.25\nb,,\n", "t", "task", &models).unwrap();
        assert_eq!(t.normalized("a"), Some(1.0 / 3.0));
        assert_eq!(t.value("b"), None);
        assert_eq!(t.labeled_ids(), vec!["a"]);
        assert!(parse_targets("model_id,value,floor\na,0.1,0.25\n", "t", "task", &models).is_err());
        assert!(parse_targets("model_id,value,floor\na,0.5,1.0\n", "t", "task", &models).is_err());
    }

    #[test]
    fn cutoff_reference_lookup() {
        let m = parse_models(&format!("{HEADER}ref,f,1e-9,1e-12,6e-21\nother,f,1,1,\n"), "t").unwrap();
        assert_eq!(flops_cutoff_default(&m, "ref").unwrap(), 6.0);
        assert!(flops_cutoff_default(&m, "absent").is_err());
        let unknown = parse_models(&format!("{HEADER}ref,f,1,,\n"), "t").unwrap();
        assert!(flops_cutoff_default(&unknown, "ref").is_err());
    }
}
