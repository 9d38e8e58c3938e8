//! Stage wiring: ingest -> budgeted sampling -> windowed clustering ->
//! event detection -> knowledge-graph export.
//!
//! `run` chains every stage in memory; the stage commands persist and reload
//! the intermediate files instead. Both paths funnel detection through the
//! same record-slicing code, and records round-trip JSONL bit-exactly, so
//! staged runs reproduce `run` outputs byte for byte given the same seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use streamres::events::{build_report, EventReport, EventReportDoc, MetricsDoc, MetricsReport};
use streamres::ingest::{
    generate_synthetic, read_records, write_records_csv, write_records_jsonl, FileFormat, Record,
};
use streamres::kgexport::{build_graph, serialize_dot, serialize_turtle};
use streamres::multires::ReservoirPool;
use streamres::resmeans::{
    assign, read_windows_jsonl, run_stream, write_window_jsonl, Window, WindowSummary,
};

use crate::config::{stage_seed, PipelineConfig, SourceConfig};

/// A failed stage, rendered as one machine-parsable line on stderr.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error: stage={} msg={:?}", self.stage, format!("{:#}", self.error))
    }
}

pub trait Staged<T> {
    fn stage(self, name: &'static str) -> Result<T, StageFailure>;
}

impl<T, E: Into<anyhow::Error>> Staged<T> for Result<T, E> {
    fn stage(self, name: &'static str) -> Result<T, StageFailure> {
        self.map_err(|e| StageFailure {
            stage: name,
            error: e.into(),
        })
    }
}

/// Drains the configured source into a record vector, aborting on the first
/// malformed row.
pub fn load_source(config: &PipelineConfig) -> Result<Vec<Record>> {
    match &config.source {
        SourceConfig::File { path, format } => {
            let reader = read_records(path, *format)?;
            let mut records = Vec::new();
            for r in reader {
                records.push(r?);
            }
            Ok(records)
        }
        SourceConfig::Synthetic { count, .. } => {
            let spec = config.synthetic_spec()?;
            Ok(generate_synthetic(&spec, *count)?.collect())
        }
    }
}

/// Feeds records through the budgeted reservoir pool; returns the pool and
/// the count of records offered.
pub fn sample_records(
    config: &PipelineConfig,
    records: impl IntoIterator<Item = Record>,
) -> Result<(ReservoirPool, u64)> {
    let mut pool = ReservoirPool::new(config.policy.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "sample"));
    let mut ingested = 0u64;
    for record in records {
        pool.on_arrival(record, &mut rng)?;
        ingested += 1;
    }
    Ok((pool, ingested))
}

/// Clusters a record sequence; writes one summary line per window to `out`
/// and returns the summaries.
pub fn cluster_records(
    config: &PipelineConfig,
    records: Vec<Record>,
    out: &mut impl Write,
) -> Result<Vec<WindowSummary>> {
    let cluster_cfg = config.cluster.to_cluster_config(config.seed);
    let mut summaries = Vec::new();
    run_stream(records, &cluster_cfg, |clustering| {
        summaries.push(WindowSummary::from(clustering));
        write_window_jsonl(out, clustering)
    })?;
    Ok(summaries)
}

/// Rebuilds each window from the record sequence (windows consume records in
/// order, `n_records` each) and detects its outliers. The assignment is
/// recomputed against the persisted centroids, which reproduces the stored
/// clustering exactly.
pub fn detect_from_summaries(
    config: &PipelineConfig,
    records: &[Record],
    summaries: &[WindowSummary],
) -> Result<Vec<EventReport>> {
    let q = config.cluster.q;
    let mut reports = Vec::new();
    let mut offset = 0usize;
    for summary in summaries {
        let end = offset + summary.n_records;
        if end > records.len() {
            bail!(
                "window {} wants records {offset}..{end} but only {} records exist",
                summary.window_seq,
                records.len()
            );
        }
        let slice = &records[offset..end];
        offset = end;
        let mut clustering = summary.to_clustering();
        clustering.assignment = assign(slice, &clustering.centroids, q);
        let window = Window {
            records: slice.to_vec(),
            opened_at: slice.first().map(|r| r.timestamp).unwrap_or(0),
            closed_by: summary.closed_by,
        };
        reports.push(build_report(&clustering, &window, &config.rule)?);
    }
    Ok(reports)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

/// Micro-aggregated run summary, persisted as summary.json.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub records_ingested: u64,
    pub records_sampled: usize,
    pub streams: usize,
    pub windows: usize,
    pub events: usize,
    pub metrics: Option<MetricsDoc>,
}

fn aggregate_metrics(reports: &[EventReport]) -> Option<MetricsDoc> {
    let counted: Vec<&MetricsReport> = reports
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .collect();
    if counted.is_empty() {
        return None;
    }
    let tp = counted.iter().map(|m| m.tp).sum();
    let fp = counted.iter().map(|m| m.fp).sum();
    let fn_ = counted.iter().map(|m| m.fn_).sum();
    Some(MetricsDoc::from(&MetricsReport::from_counts(tp, fp, fn_)))
}

/// Executes the full pipeline and writes windows.jsonl, events.jsonl,
/// graph.ttl, graph.dot and summary.json into `out_dir`.
pub fn cmd_run(config: &PipelineConfig, out_dir: &Path) -> Result<RunSummary, StageFailure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .stage("run")?;
    let records = load_source(config).stage("ingest")?;
    let (pool, ingested) = sample_records(config, records).stage("sample")?;
    let sampled = pool.merged_sample();
    let streams = pool.counts().len();

    let mut windows_file = create(&out_dir.join("windows.jsonl")).stage("cluster")?;
    let summaries =
        cluster_records(config, sampled.clone(), &mut windows_file).stage("cluster")?;
    windows_file.flush().stage("cluster")?;

    let reports = detect_from_summaries(config, &sampled, &summaries).stage("detect")?;
    let mut events_file = create(&out_dir.join("events.jsonl")).stage("detect")?;
    for report in &reports {
        streamres::events::write_report_jsonl(&mut events_file, report).stage("detect")?;
    }
    events_file.flush().stage("detect")?;

    let clusterings: Vec<_> = summaries.iter().map(|s| s.to_clustering()).collect();
    let triples = build_graph(&clusterings, &reports).stage("export")?;
    let ttl = serialize_turtle(&triples).stage("export")?;
    std::fs::write(out_dir.join("graph.ttl"), ttl).stage("export")?;
    std::fs::write(out_dir.join("graph.dot"), serialize_dot(&triples)).stage("export")?;

    let summary = RunSummary {
        seed: config.seed,
        records_ingested: ingested,
        records_sampled: sampled.len(),
        streams,
        windows: summaries.len(),
        events: reports.iter().map(|r| r.events.len()).sum(),
        metrics: aggregate_metrics(&reports),
    };
    let mut summary_file = create(&out_dir.join("summary.json")).stage("run")?;
    serde_json::to_writer_pretty(&mut summary_file, &summary)
        .context("writing summary.json")
        .stage("run")?;
    summary_file.write_all(b"\n").stage("run")?;
    summary_file.flush().stage("run")?;
    Ok(summary)
}

/// Runs ingest + budgeted sampling; writes sampled.jsonl and pool.json.
pub fn cmd_sample(config: &PipelineConfig, out_dir: &Path) -> Result<(), StageFailure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .stage("sample")?;
    let records = load_source(config).stage("ingest")?;
    let (pool, _) = sample_records(config, records).stage("sample")?;
    let sampled = pool.merged_sample();
    let mut sample_file = create(&out_dir.join("sampled.jsonl")).stage("sample")?;
    write_records_jsonl(&mut sample_file, &sampled).stage("sample")?;
    sample_file.flush().stage("sample")?;
    let mut pool_file = create(&out_dir.join("pool.json")).stage("sample")?;
    pool.snapshot().write_json(&mut pool_file).stage("sample")?;
    pool_file.flush().stage("sample")?;
    Ok(())
}

/// Clusters a persisted record file; writes windows.jsonl.
pub fn cmd_cluster(
    config: &PipelineConfig,
    records_path: &Path,
    format: FileFormat,
    out_dir: &Path,
) -> Result<(), StageFailure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .stage("cluster")?;
    let records: Vec<Record> = read_records(records_path, format)
        .stage("cluster")?
        .collect::<Result<_, _>>()
        .stage("cluster")?;
    let mut windows_file = create(&out_dir.join("windows.jsonl")).stage("cluster")?;
    cluster_records(config, records, &mut windows_file).stage("cluster")?;
    windows_file.flush().stage("cluster")?;
    Ok(())
}

/// Detects outliers for persisted windows; writes events.jsonl.
pub fn cmd_detect(
    config: &PipelineConfig,
    records_path: &Path,
    format: FileFormat,
    windows_path: &Path,
    out_dir: &Path,
) -> Result<(), StageFailure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .stage("detect")?;
    let records: Vec<Record> = read_records(records_path, format)
        .stage("detect")?
        .collect::<Result<_, _>>()
        .stage("detect")?;
    let summaries = read_windows_jsonl(BufReader::new(
        File::open(windows_path)
            .with_context(|| format!("opening {}", windows_path.display()))
            .stage("detect")?,
    ))
    .stage("detect")?;
    let reports = detect_from_summaries(config, &records, &summaries).stage("detect")?;
    let mut events_file = create(&out_dir.join("events.jsonl")).stage("detect")?;
    for report in &reports {
        streamres::events::write_report_jsonl(&mut events_file, report).stage("detect")?;
    }
    events_file.flush().stage("detect")?;
    Ok(())
}

/// Serializes persisted windows + events as Turtle and DOT.
pub fn cmd_export(
    windows_path: &Path,
    events_path: &Path,
    out_dir: &Path,
) -> Result<(), StageFailure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .stage("export")?;
    let summaries = read_windows_jsonl(BufReader::new(
        File::open(windows_path)
            .with_context(|| format!("opening {}", windows_path.display()))
            .stage("export")?,
    ))
    .stage("export")?;
    let docs = streamres::events::read_reports_jsonl(BufReader::new(
        File::open(events_path)
            .with_context(|| format!("opening {}", events_path.display()))
            .stage("export")?,
    ))
    .stage("export")?;
    let clusterings: Vec<_> = summaries.iter().map(|s| s.to_clustering()).collect();
    let reports: Vec<EventReport> = docs.iter().map(EventReportDoc::to_report).collect();
    let triples = build_graph(&clusterings, &reports).stage("export")?;
    let ttl = serialize_turtle(&triples).stage("export")?;
    std::fs::write(out_dir.join("graph.ttl"), ttl).stage("export")?;
    std::fs::write(out_dir.join("graph.dot"), serialize_dot(&triples)).stage("export")?;
    Ok(())
}

/// Writes the configured synthetic source to a record file.
pub fn cmd_generate(
    config: &PipelineConfig,
    out_path: &Path,
    format: FileFormat,
) -> Result<(), StageFailure> {
    let SourceConfig::Synthetic { count, .. } = &config.source else {
        return Err(StageFailure {
            stage: "generate",
            error: anyhow!("generate needs a synthetic source in the config"),
        });
    };
    let spec = config.synthetic_spec().stage("generate")?;
    let records: Vec<Record> = generate_synthetic(&spec, *count)
        .stage("generate")?
        .collect();
    let mut out = create(out_path).stage("generate")?;
    match format {
        FileFormat::Csv => write_records_csv(&mut out, &records).stage("generate")?,
        FileFormat::Jsonl => write_records_jsonl(&mut out, &records).stage("generate")?,
    }
    out.flush().stage("generate")?;
    Ok(())
}
