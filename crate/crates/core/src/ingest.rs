//! Record sources: delimited files and a synthetic Gaussian-mixture generator.
//!
//! Every downstream stage consumes the same [`Record`] shape regardless of
//! where the data came from. File readers are streaming iterators that report
//! malformed rows with their line number instead of skipping them.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One stream element.
///
/// `weight` is always materialized: absent weights in the input become
/// exactly `1.0`, so unweighted streams are the unit-weight special case of
/// weighted ones. Timestamps are non-decreasing within one `stream_id` and
/// use arbitrary units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub stream_id: String,
    #[serde(rename = "ts")]
    pub timestamp: u64,
    pub features: Vec<f64>,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn default_weight() -> f64 {
    1.0
}

impl Record {
    /// Feature dimensionality.
    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Weight distribution used by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum WeightLaw {
    Constant,
    Exponential { rate: f64 },
    Pareto { alpha: f64 },
}

/// Parameters of the synthetic Gaussian-mixture stream.
///
/// Records are drawn from `n_clusters` isotropic Gaussians; a fraction
/// `anomaly_rate` is placed on a shell at `anomaly_offset * stddev` from its
/// generating mean (and at least that far from every other mean) and labeled
/// `"anomaly"`. Regular records carry the label `cluster-<i>` of their
/// generating component, and their stream id mirrors it (`s<i>`), so a
/// mixture naturally produces one sub-stream per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_clusters: usize,
    pub means: Vec<Vec<f64>>,
    pub stddev: f64,
    pub anomaly_rate: f64,
    pub anomaly_offset: f64,
    pub weight_law: WeightLaw,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), IngestError> {
        let fail = |msg: &str| Err(IngestError::InvalidSpec(msg.to_string()));
        if self.n_clusters == 0 || self.means.len() != self.n_clusters {
            return fail("means must list exactly n_clusters vectors");
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return fail("means must share a dimensionality of at least 1");
        }
        if self.means.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return fail("means must be finite");
        }
        for i in 0..self.means.len() {
            for j in (i + 1)..self.means.len() {
                if self.means[i] == self.means[j] {
                    return fail("means must be pairwise distinct");
                }
            }
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return fail("stddev must be positive and finite");
        }
        if !(0.0..0.5).contains(&self.anomaly_rate) {
            return fail("anomaly_rate must lie in [0, 0.5)");
        }
        if !(self.anomaly_offset > 0.0 && self.anomaly_offset.is_finite()) {
            return fail("anomaly_offset must be positive and finite");
        }
        match self.weight_law {
            WeightLaw::Constant => {}
            WeightLaw::Exponential { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return fail("exponential rate must be positive and finite");
                }
            }
            WeightLaw::Pareto { alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return fail("pareto alpha must be positive and finite");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input file not found: {0}")]
    MissingFile(PathBuf),
    #[error("line {line}: {msg}")]
    SchemaMismatch { line: u64, msg: String },
    #[error("line {line}: non-finite feature value")]
    NonFiniteFeature { line: u64 },
    #[error("line {line}: weight must be positive and finite")]
    NonPositiveWeight { line: u64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

/// Opens `path` and returns a streaming reader over its records.
///
/// CSV files need the header `stream_id,timestamp,f1..fd[,weight][,label]`;
/// the optional trailing columns are recognized by name. JSONL files hold one
/// object per line with keys `stream_id`, `ts`, `features` and optional
/// `weight`, `label`. Rows that violate the record invariants surface as
/// per-line errors.
pub fn read_records(
    path: impl AsRef<Path>,
    format: FileFormat,
) -> Result<RecordReader<File>, IngestError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    read_records_from(File::open(path)?, format)
}

/// Streaming reader over records from any byte source; see [`read_records`]
/// for the format contracts.
pub fn read_records_from<R: Read>(
    reader: R,
    format: FileFormat,
) -> Result<RecordReader<R>, IngestError> {
    let inner = match format {
        FileFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(reader);
            let layout = CsvLayout::from_headers(reader.headers().map_err(|e| csv_error(1, e))?)?;
            ReaderKind::Csv {
                rows: reader.into_records(),
                layout,
            }
        }
        FileFormat::Jsonl => ReaderKind::Jsonl {
            lines: BufReader::new(reader).lines(),
            line: 0,
            dim: None,
        },
    };
    Ok(RecordReader { inner })
}

/// Iterator over records of an open source; yields per-row errors in place.
pub struct RecordReader<R: Read> {
    inner: ReaderKind<R>,
}

enum ReaderKind<R: Read> {
    Csv {
        rows: csv::StringRecordsIntoIter<R>,
        layout: CsvLayout,
    },
    Jsonl {
        lines: std::io::Lines<BufReader<R>>,
        line: u64,
        dim: Option<usize>,
    },
}

struct CsvLayout {
    dim: usize,
    weight_col: Option<usize>,
    label_col: Option<usize>,
}

impl CsvLayout {
    fn from_headers(headers: &csv::StringRecord) -> Result<Self, IngestError> {
        let names: Vec<&str> = headers.iter().collect();
        let mismatch = |msg: &str| IngestError::SchemaMismatch {
            line: 1,
            msg: msg.to_string(),
        };
        if names.first() != Some(&"stream_id") || names.get(1) != Some(&"timestamp") {
            return Err(mismatch("header must start with stream_id,timestamp"));
        }
        let mut idx = 2;
        while idx < names.len() && names[idx] != "weight" && names[idx] != "label" {
            idx += 1;
        }
        let dim = idx - 2;
        if dim == 0 {
            return Err(mismatch("header declares no feature columns"));
        }
        let mut weight_col = None;
        let mut label_col = None;
        if idx < names.len() && names[idx] == "weight" {
            weight_col = Some(idx);
            idx += 1;
        }
        if idx < names.len() && names[idx] == "label" {
            label_col = Some(idx);
            idx += 1;
        }
        if idx != names.len() {
            return Err(mismatch("unrecognized trailing header columns"));
        }
        Ok(CsvLayout {
            dim,
            weight_col,
            label_col,
        })
    }

    fn parse(&self, line: u64, row: &csv::StringRecord) -> Result<Record, IngestError> {
        let expected = 2 + self.dim + self.weight_col.is_some() as usize + self.label_col.is_some() as usize;
        if row.len() != expected {
            return Err(IngestError::SchemaMismatch {
                line,
                msg: format!("expected {expected} fields, found {}", row.len()),
            });
        }
        let stream_id = row[0].to_string();
        let timestamp: u64 = row[1].parse().map_err(|_| IngestError::SchemaMismatch {
            line,
            msg: format!("timestamp {:?} is not a non-negative integer", &row[1]),
        })?;
        let mut features = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let raw = &row[2 + i];
            let value: f64 = raw.parse().map_err(|_| IngestError::SchemaMismatch {
                line,
                msg: format!("feature column {} value {raw:?} is not a number", i + 1),
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFiniteFeature { line });
            }
            features.push(value);
        }
        let weight = match self.weight_col {
            Some(col) if !row[col].is_empty() => {
                let w: f64 = row[col].parse().map_err(|_| IngestError::SchemaMismatch {
                    line,
                    msg: format!("weight {:?} is not a number", &row[col]),
                })?;
                if !(w > 0.0 && w.is_finite()) {
                    return Err(IngestError::NonPositiveWeight { line });
                }
                w
            }
            _ => 1.0,
        };
        let label = self
            .label_col
            .map(|col| row[col].to_string())
            .filter(|s| !s.is_empty());
        Ok(Record {
            stream_id,
            timestamp,
            features,
            weight,
            label,
        })
    }
}

fn csv_error(fallback_line: u64, err: csv::Error) -> IngestError {
    let line = err
        .position()
        .map(|p| p.line())
        .unwrap_or(fallback_line);
    IngestError::SchemaMismatch {
        line,
        msg: err.to_string(),
    }
}

fn parse_jsonl_line(line_no: u64, text: &str, dim: &mut Option<usize>) -> Result<Record, IngestError> {
    let mismatch = |msg: String| IngestError::SchemaMismatch { line: line_no, msg };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| mismatch(e.to_string()))?;
    let record: Record =
        serde_json::from_value(value).map_err(|e| mismatch(e.to_string()))?;
    if record.features.is_empty() {
        return Err(mismatch("features array is empty".to_string()));
    }
    match *dim {
        Some(d) if d != record.dim() => {
            return Err(mismatch(format!(
                "feature arity {} differs from earlier rows ({d})",
                record.dim()
            )));
        }
        None => *dim = Some(record.dim()),
        _ => {}
    }
    if record.features.iter().any(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteFeature { line: line_no });
    }
    if !(record.weight > 0.0 && record.weight.is_finite()) {
        return Err(IngestError::NonPositiveWeight { line: line_no });
    }
    Ok(record)
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Record, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            ReaderKind::Csv { rows, layout } => {
                let row = match rows.next()? {
                    Ok(row) => row,
                    Err(e) => return Some(Err(csv_error(0, e))),
                };
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                Some(layout.parse(line, &row))
            }
            ReaderKind::Jsonl { lines, line, dim } => loop {
                let text = match lines.next()? {
                    Ok(text) => text,
                    Err(e) => return Some(Err(e.into())),
                };
                *line += 1;
                if text.trim().is_empty() {
                    continue;
                }
                return Some(parse_jsonl_line(*line, &text, dim));
            },
        }
    }
}

/// Writes records as CSV with the canonical header
/// `stream_id,timestamp,f1..fd,weight,label`. All records must share one
/// dimensionality.
pub fn write_records_csv<'a>(
    w: &mut impl std::io::Write,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Option<usize> = None;
    for r in records {
        if header.is_none() {
            let mut names = vec!["stream_id".to_string(), "timestamp".to_string()];
            names.extend((1..=r.dim()).map(|i| format!("f{i}")));
            names.push("weight".to_string());
            names.push("label".to_string());
            writer
                .write_record(&names)
                .map_err(|e| csv_error(1, e))?;
            header = Some(r.dim());
        }
        let mut row = vec![r.stream_id.clone(), r.timestamp.to_string()];
        row.extend(r.features.iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", r.weight));
        row.push(r.label.clone().unwrap_or_default());
        writer.write_record(&row).map_err(|e| csv_error(0, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes records as JSONL, one object per line.
pub fn write_records_jsonl<'a>(
    w: &mut impl std::io::Write,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(), IngestError> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| IngestError::SchemaMismatch {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Deterministic synthetic record stream; see [`SyntheticSpec`].
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    count: u64,
) -> Result<SyntheticStream, IngestError> {
    spec.validate()?;
    Ok(SyntheticStream {
        spec: spec.clone(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        next_ts: 0,
        remaining: count,
    })
}

/// Iterator produced by [`generate_synthetic`].
pub struct SyntheticStream {
    spec: SyntheticSpec,
    rng: ChaCha8Rng,
    next_ts: u64,
    remaining: u64,
}

impl SyntheticStream {
    fn draw_weight(&mut self) -> f64 {
        match self.spec.weight_law {
            WeightLaw::Constant => 1.0,
            WeightLaw::Exponential { rate } => {
                let exp = Exp::new(rate).expect("rate validated");
                loop {
                    let w: f64 = exp.sample(&mut self.rng);
                    if w > 0.0 {
                        return w;
                    }
                }
            }
            WeightLaw::Pareto { alpha } => Pareto::new(1.0, alpha)
                .expect("alpha validated")
                .sample(&mut self.rng),
        }
    }

    /// Isotropic unit direction in `d` dimensions.
    fn draw_direction(&mut self, d: usize) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        loop {
            let v: Vec<f64> = (0..d).map(|_| normal.sample(&mut self.rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Places a point on a shell of radius `anomaly_offset * stddev` around
    /// the mean of cluster `c`, at least that far from every other mean.
    fn draw_anomaly(&mut self, c: usize) -> Vec<f64> {
        let d = self.spec.means[0].len();
        let radius = self.spec.anomaly_offset * self.spec.stddev;
        for _ in 0..1000 {
            let dir = self.draw_direction(d);
            let point: Vec<f64> = self.spec.means[c]
                .iter()
                .zip(&dir)
                .map(|(m, u)| m + radius * u)
                .collect();
            if self.clears_all_means(&point, radius) {
                return point;
            }
        }
        // Fallback radius clears every mean in any direction.
        let spread = self
            .spec
            .means
            .iter()
            .map(|m| euclid(m, &self.spec.means[c]))
            .fold(0.0, f64::max);
        let dir = self.draw_direction(d);
        self.spec.means[c]
            .iter()
            .zip(&dir)
            .map(|(m, u)| m + (radius + spread) * u)
            .collect()
    }

    fn clears_all_means(&self, point: &[f64], radius: f64) -> bool {
        self.spec.means.iter().all(|m| euclid(m, point) >= radius)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl Iterator for SyntheticStream {
    type Item = Record;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let ts = self.next_ts;
        self.next_ts += 1;

        let c = self.rng.random_range(0..self.spec.n_clusters);
        let is_anomaly = self.spec.anomaly_rate > 0.0
            && self.rng.random::<f64>() < self.spec.anomaly_rate;
        let (features, label) = if is_anomaly {
            (self.draw_anomaly(c), "anomaly".to_string())
        } else {
            let normal = Normal::new(0.0, self.spec.stddev).expect("stddev validated");
            let features = self.spec.means[c]
                .iter()
                .map(|m| m + normal.sample(&mut self.rng))
                .collect();
            (features, format!("cluster-{c}"))
        };
        let weight = self.draw_weight();
        Some(Record {
            stream_id: format!("s{c}"),
            timestamp: ts,
            features,
            weight,
            label: Some(label),
        })
    }
}
