//! Outlier detection against window clusterings, event scores and
//! precision/recall/F evaluation.
//!
//! A record is an outlier when its distance to its assigned centroid exceeds
//! `center + lambda * spread` of the member distances in that cluster. The
//! default estimators are the median and the scaled MAD (1.4826 * MAD): a
//! single extreme point inflates the plain standard deviation enough to mask
//! itself, which the robust pair avoids. The plain mean/stddev pair stays
//! selectable through [`OutlierRule::robust`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resmeans::{Window, WindowClustering};

/// MAD-to-standard-deviation consistency factor for the normal distribution.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("clustering covers {assigned} records, window holds {records}")]
    MismatchedWindow { assigned: usize, records: usize },
    #[error("cluster {0} has zero mean member distance but emits outliers")]
    DegenerateCluster(usize),
    #[error("window records carry no ground-truth labels")]
    NoLabels,
}

/// Distance-threshold outlier rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRule {
    /// Spread multiples beyond the center that mark an outlier.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Median/MAD estimators when true, mean/stddev when false.
    #[serde(default = "default_robust")]
    pub robust: bool,
}

fn default_lambda() -> f64 {
    3.0
}
fn default_robust() -> bool {
    true
}

impl Default for OutlierRule {
    fn default() -> Self {
        OutlierRule {
            lambda: default_lambda(),
            robust: default_robust(),
        }
    }
}

/// One flagged record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// (window_seq, record index within the window).
    pub record_ref: (u64, usize),
    pub cluster_id: usize,
    /// Distance to the assigned centroid.
    pub distance: f64,
    /// distance / mean member distance of the cluster.
    pub score_contribution: f64,
}

/// Counts and derived metrics of an evaluation against ground-truth labels.
/// `precision`, `recall` and `f_measure` are fractions in [0, 1]; exported
/// reports scale them to percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl MetricsReport {
    /// Applies the zero-denominator convention: a metric whose denominator
    /// is zero is zero.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        MetricsReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, zero when both are zero. Scale-free: percent inputs give
/// percent output.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-window event report: flagged records, per-cluster scores and, when
/// ground truth was available, evaluation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub window_seq: u64,
    pub events: Vec<Event>,
    pub scores: BTreeMap<usize, f64>,
    pub metrics: Option<MetricsReport>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Flags every record whose centroid distance exceeds its cluster's
/// threshold. Clusters with fewer than two members emit no outliers (their
/// spread is undefined).
pub fn detect_outliers(
    clustering: &WindowClustering,
    window: &Window,
    rule: &OutlierRule,
) -> Result<Vec<Event>, EventError> {
    if clustering.assignment.len() != window.records.len() {
        return Err(EventError::MismatchedWindow {
            assigned: clustering.assignment.len(),
            records: window.records.len(),
        });
    }
    let k = clustering.centroids.len();
    let distances: Vec<f64> = window
        .records
        .iter()
        .zip(&clustering.assignment)
        .map(|(r, &c)| euclid(&r.features, &clustering.centroids[c].position))
        .collect();

    let mut events = Vec::new();
    for c in 0..k {
        let member_dists: Vec<f64> = distances
            .iter()
            .zip(&clustering.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(&d, _)| d)
            .collect();
        if member_dists.len() < 2 {
            continue;
        }
        let mean = member_dists.iter().sum::<f64>() / member_dists.len() as f64;
        let threshold = if rule.robust {
            let mut sorted = member_dists.clone();
            sorted.sort_by(f64::total_cmp);
            let med = median(&sorted);
            let mut deviations: Vec<f64> = sorted.iter().map(|d| (d - med).abs()).collect();
            deviations.sort_by(f64::total_cmp);
            med + rule.lambda * MAD_SCALE * median(&deviations)
        } else {
            let var = member_dists
                .iter()
                .map(|d| (d - mean) * (d - mean))
                .sum::<f64>()
                / member_dists.len() as f64;
            mean + rule.lambda * var.sqrt()
        };
        for (idx, (&d, &a)) in distances.iter().zip(&clustering.assignment).enumerate() {
            if a == c && d > threshold {
                if mean <= 0.0 {
                    return Err(EventError::DegenerateCluster(c));
                }
                events.push(Event {
                    record_ref: (clustering.window_seq, idx),
                    cluster_id: c,
                    distance: d,
                    score_contribution: d / mean,
                });
            }
        }
    }
    events.sort_by_key(|e| e.record_ref.1);
    Ok(events)
}

/// Event score of one cluster: the sum of its outlier distances normalized
/// by the cluster's mean member distance. Zero without outliers.
pub fn event_score(
    cluster_id: usize,
    events: &[Event],
    clustering: &WindowClustering,
) -> Result<f64, EventError> {
    debug_assert!(cluster_id < clustering.centroids.len());
    let mut score = 0.0;
    for e in events {
        assert_eq!(
            e.cluster_id, cluster_id,
            "event of cluster {} scored against cluster {cluster_id}",
            e.cluster_id
        );
        if !e.score_contribution.is_finite() {
            return Err(EventError::DegenerateCluster(cluster_id));
        }
        score += e.score_contribution;
    }
    Ok(score)
}

fn is_cluster_label(label: &str) -> bool {
    label
        .strip_prefix("cluster-")
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// Compares flagged records against ground-truth labels. A record is a true
/// positive when flagged and labeled with anything other than a cluster
/// label (`cluster-<i>`); the synthetic generator marks those `"anomaly"`.
pub fn evaluate(events: &[Event], window: &Window) -> Result<MetricsReport, EventError> {
    if window.records.iter().any(|r| r.label.is_none()) {
        return Err(EventError::NoLabels);
    }
    let mut flagged = vec![false; window.records.len()];
    for e in events {
        if e.record_ref.1 >= flagged.len() {
            return Err(EventError::MismatchedWindow {
                assigned: e.record_ref.1,
                records: window.records.len(),
            });
        }
        flagged[e.record_ref.1] = true;
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (r, &is_flagged) in window.records.iter().zip(&flagged) {
        let positive = !is_cluster_label(r.label.as_deref().expect("checked above"));
        match (is_flagged, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_))
}

/// Builds the full per-window report: detection, per-cluster scores and
/// metrics when every record carries a label.
pub fn build_report(
    clustering: &WindowClustering,
    window: &Window,
    rule: &OutlierRule,
) -> Result<EventReport, EventError> {
    let events = detect_outliers(clustering, window, rule)?;
    let mut scores = BTreeMap::new();
    for c in 0..clustering.centroids.len() {
        let cluster_events: Vec<Event> = events
            .iter()
            .filter(|e| e.cluster_id == c)
            .cloned()
            .collect();
        scores.insert(c, event_score(c, &cluster_events, clustering)?);
    }
    let metrics = if window.records.iter().all(|r| r.label.is_some()) {
        Some(evaluate(&events, window)?)
    } else {
        None
    };
    Ok(EventReport {
        window_seq: clustering.window_seq,
        events,
        scores,
        metrics,
    })
}

/// One line of the events JSONL file.
///
/// Events are persisted as `{cluster_id, index, distance}` (the window_seq
/// lives at report level); metrics are persisted in percent form.
/// `score_contribution` is derivable and not persisted, so reports loaded
/// back from disk carry 0 in that field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventReportDoc {
    pub window_seq: u64,
    pub events: Vec<EventDoc>,
    pub scores: BTreeMap<usize, f64>,
    pub metrics: Option<MetricsDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventDoc {
    pub cluster_id: usize,
    pub index: usize,
    pub distance: f64,
}

/// Metrics in percent form, as exported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl From<&MetricsReport> for MetricsDoc {
    fn from(m: &MetricsReport) -> Self {
        MetricsDoc {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: m.precision * 100.0,
            recall: m.recall * 100.0,
            f: m.f_measure * 100.0,
        }
    }
}

impl From<&EventReport> for EventReportDoc {
    fn from(r: &EventReport) -> Self {
        EventReportDoc {
            window_seq: r.window_seq,
            events: r
                .events
                .iter()
                .map(|e| EventDoc {
                    cluster_id: e.cluster_id,
                    index: e.record_ref.1,
                    distance: e.distance,
                })
                .collect(),
            scores: r.scores.clone(),
            metrics: r.metrics.as_ref().map(MetricsDoc::from),
        }
    }
}

impl EventReportDoc {
    /// Rebuilds the in-memory report. Percent metrics are scaled back to
    /// fractions; score contributions are not persisted and come back as 0.
    pub fn to_report(&self) -> EventReport {
        EventReport {
            window_seq: self.window_seq,
            events: self
                .events
                .iter()
                .map(|e| Event {
                    record_ref: (self.window_seq, e.index),
                    cluster_id: e.cluster_id,
                    distance: e.distance,
                    score_contribution: 0.0,
                })
                .collect(),
            scores: self.scores.clone(),
            metrics: self.metrics.as_ref().map(|m| MetricsReport {
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
                precision: m.precision / 100.0,
                recall: m.recall / 100.0,
                f_measure: m.f / 100.0,
            }),
        }
    }
}

/// Appends one report line to an events JSONL stream.
pub fn write_report_jsonl(
    w: &mut impl std::io::Write,
    report: &EventReport,
) -> Result<(), std::io::Error> {
    serde_json::to_writer(&mut *w, &EventReportDoc::from(report))?;
    w.write_all(b"\n")
}

/// Reads every report line of an events JSONL stream.
pub fn read_reports_jsonl(
    r: impl std::io::BufRead,
) -> Result<Vec<EventReportDoc>, std::io::Error> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("events line: {e}"))
        })?);
    }
    Ok(out)
}
