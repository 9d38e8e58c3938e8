//! Knowledge-graph export of windows, clusters and events.
//!
//! Entities use deterministic ids — `win:{seq}`, `clu:{seq}:{id}`,
//! `evt:{seq}:{index}` — under the fixed namespace
//! `http://streamres.local/ns#` (prefix `sr:`). Serialization sorts triples
//! by subject, predicate, object so identical inputs yield identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::EventReport;
use crate::resmeans::WindowClustering;

pub const NAMESPACE: &str = "http://streamres.local/ns#";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("clusterings and reports do not align: {0}")]
    AlignmentMismatch(String),
    #[error("invalid IRI component {0:?}")]
    InvalidIri(String),
}

/// Object position of a triple: another entity or a typed literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Object {
    Iri(String),
    Literal { value: String, kind: LiteralKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    String,
    Integer,
    Decimal,
}

impl LiteralKind {
    fn xsd(self) -> &'static str {
        match self {
            LiteralKind::String => "xsd:string",
            LiteralKind::Integer => "xsd:integer",
            LiteralKind::Decimal => "xsd:decimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Object,
}

impl Triple {
    fn entity(subject: impl Into<String>, predicate: &str, object: impl Into<String>) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.to_string(),
            object: Object::Iri(object.into()),
        }
    }

    fn literal(
        subject: impl Into<String>,
        predicate: &str,
        value: impl Into<String>,
        kind: LiteralKind,
    ) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.to_string(),
            object: Object::Literal {
                value: value.into(),
                kind,
            },
        }
    }

    fn sort_key(&self) -> (&str, &str, u8, &str) {
        match &self.object {
            Object::Iri(o) => (&self.subject, &self.predicate, 0, o),
            Object::Literal { value, .. } => (&self.subject, &self.predicate, 1, value),
        }
    }
}

fn decimal(v: f64) -> String {
    format!("{v:.6}")
}

fn vector_literal(position: &[f64]) -> String {
    let mut out = String::from("[");
    for (i, v) in position.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{v:?}");
    }
    out.push(']');
    out
}

/// Emits the graph for a pipeline run.
///
/// Per window: one `hasCluster` edge per cluster. Per cluster: its centroid
/// vector, SSE and event score. Per event: `detectedIn`, `belongsTo` and the
/// distance. Reports must align one-to-one with clusterings by both position
/// and `window_seq`.
pub fn build_graph(
    clusterings: &[WindowClustering],
    reports: &[EventReport],
) -> Result<Vec<Triple>, KgError> {
    if clusterings.len() != reports.len() {
        return Err(KgError::AlignmentMismatch(format!(
            "{} clusterings vs {} reports",
            clusterings.len(),
            reports.len()
        )));
    }
    let mut triples = Vec::new();
    for (clustering, report) in clusterings.iter().zip(reports) {
        if clustering.window_seq != report.window_seq {
            return Err(KgError::AlignmentMismatch(format!(
                "clustering window {} paired with report window {}",
                clustering.window_seq, report.window_seq
            )));
        }
        let seq = clustering.window_seq;
        let win = format!("win:{seq}");
        for centroid in &clustering.centroids {
            let c = centroid.cluster_id;
            let clu = format!("clu:{seq}:{c}");
            triples.push(Triple::entity(&win, "hasCluster", &clu));
            triples.push(Triple::literal(
                &clu,
                "hasCentroid",
                vector_literal(&centroid.position),
                LiteralKind::String,
            ));
            triples.push(Triple::literal(
                &clu,
                "hasSSE",
                decimal(clustering.sse_per_cluster[c]),
                LiteralKind::Decimal,
            ));
            let score = report.scores.get(&c).copied().unwrap_or(0.0);
            triples.push(Triple::literal(
                &clu,
                "hasScore",
                decimal(score),
                LiteralKind::Decimal,
            ));
        }
        for event in &report.events {
            let evt = format!("evt:{seq}:{}", event.record_ref.1);
            triples.push(Triple::entity(&evt, "detectedIn", &win));
            triples.push(Triple::entity(
                &evt,
                "belongsTo",
                format!("clu:{seq}:{}", event.cluster_id),
            ));
            triples.push(Triple::literal(
                &evt,
                "hasDistance",
                decimal(event.distance),
                LiteralKind::Decimal,
            ));
        }
    }
    Ok(triples)
}

fn check_iri(component: &str) -> Result<(), KgError> {
    let ok = !component.is_empty()
        && component
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, ':' | '_' | '.' | '-'));
    if ok {
        Ok(())
    } else {
        Err(KgError::InvalidIri(component.to_string()))
    }
}

fn escape_literal(value: &str) -> String {
    value
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

fn sorted(triples: &[Triple]) -> Vec<&Triple> {
    let mut ordered: Vec<&Triple> = triples.iter().collect();
    ordered.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    ordered
}

/// Serializes to Turtle: one prefix block, one sorted statement per line.
pub fn serialize_turtle(triples: &[Triple]) -> Result<String, KgError> {
    let mut out = String::new();
    out.push_str(&format!("@prefix sr: <{NAMESPACE}> .\n"));
    out.push_str("@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .\n");
    if triples.is_empty() {
        return Ok(out);
    }
    out.push('\n');
    for t in sorted(triples) {
        check_iri(&t.subject)?;
        check_iri(&t.predicate)?;
        let object = match &t.object {
            Object::Iri(o) => {
                check_iri(o)?;
                format!("sr:{o}")
            }
            Object::Literal { value, kind } => {
                format!("\"{}\"^^{}", escape_literal(value), kind.xsd())
            }
        };
        let _ = writeln!(out, "sr:{} sr:{} {object} .", t.subject, t.predicate);
    }
    Ok(out)
}

/// Serializes to a DOT digraph: entities as nodes, predicates as edge
/// labels, literals as leaf nodes.
pub fn serialize_dot(triples: &[Triple]) -> String {
    let mut out = String::new();
    out.push_str("digraph kg {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, fontsize=10];\n");
    let mut literal_nodes = Vec::new();
    for t in sorted(triples) {
        match &t.object {
            Object::Iri(o) => {
                let _ = writeln!(
                    out,
                    "  \"{}\" -> \"{}\" [label=\"{}\"];",
                    t.subject, o, t.predicate
                );
            }
            Object::Literal { value, .. } => {
                let id = format!("lit{}", literal_nodes.len());
                let _ = writeln!(
                    out,
                    "  \"{}\" -> \"{id}\" [label=\"{}\"];",
                    t.subject, t.predicate
                );
                literal_nodes.push((id, value.clone()));
            }
        }
    }
    for (id, value) in literal_nodes {
        let _ = writeln!(
            out,
            "  \"{id}\" [label=\"{}\", shape=note];",
            escape_literal(&value)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resmeans::{Centroid, ClosedBy};
    use std::collections::BTreeMap;

    pub(crate) fn fixture_graph() -> (Vec<WindowClustering>, Vec<EventReport>) {
        let clustering = WindowClustering {
            window_seq: 0,
            closed_by: ClosedBy::Full,
            centroids: vec![
                Centroid {
                    position: vec![0.0, 0.0],
                    cluster_id: 0,
                },
                Centroid {
                    position: vec![3.0, 4.0],
                    cluster_id: 1,
                },
            ],
            assignment: vec![0, 1],
            sse_per_cluster: vec![2.0, 0.5],
            sse_per_dimension: vec![vec![1.0, 1.0], vec![0.25, 0.25]],
            sse_total: 2.5,
            iterations: 3,
        };
        let report = EventReport {
            window_seq: 0,
            events: vec![],
            scores: BTreeMap::from([(0, 0.0), (1, 0.0)]),
            metrics: None,
        };
        (vec![clustering], vec![report])
    }

    #[test]
    fn empty_inputs_give_empty_graph() {
        assert!(build_graph(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn schema_counts_for_one_window() {
        let (clusterings, reports) = fixture_graph();
        let triples = build_graph(&clusterings, &reports).unwrap();
        // 2 clusters x {hasCentroid, hasSSE, hasScore} + 2 hasCluster edges.
        assert_eq!(triples.len(), 8);
    }

    #[test]
    fn one_event_adds_three_triples() {
        let (clusterings, mut reports) = fixture_graph();
        reports[0].events.push(crate::events::Event {
            record_ref: (0, 1),
            cluster_id: 1,
            distance: 6.5,
            score_contribution: 1.3,
        });
        let triples = build_graph(&clusterings, &reports).unwrap();
        assert_eq!(triples.len(), 11);
        let evt_triples: Vec<&Triple> =
            triples.iter().filter(|t| t.subject == "evt:0:1").collect();
        assert_eq!(evt_triples.len(), 3);
    }

    #[test]
    fn misaligned_reports_are_rejected() {
        let (clusterings, mut reports) = fixture_graph();
        reports[0].window_seq = 5;
        assert!(matches!(
            build_graph(&clusterings, &reports),
            Err(KgError::AlignmentMismatch(_))
        ));
        assert!(matches!(
            build_graph(&clusterings, &[]),
            Err(KgError::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn empty_graph_is_prefix_block_only() {
        let ttl = serialize_turtle(&[]).unwrap();
        assert_eq!(
            ttl,
            "@prefix sr: <http://streamres.local/ns#> .\n@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .\n"
        );
    }

    #[test]
    fn single_triple_statement() {
        let t = Triple::entity("win:0", "hasCluster", "clu:0:0");
        let ttl = serialize_turtle(&[t]).unwrap();
        let last = ttl.lines().last().unwrap();
        assert_eq!(last, "sr:win:0 sr:hasCluster sr:clu:0:0 .");
        assert!(last.ends_with(" ."));
    }

    #[test]
    fn statement_count_equals_triple_count() {
        let (clusterings, reports) = fixture_graph();
        let triples = build_graph(&clusterings, &reports).unwrap();
        let ttl = serialize_turtle(&triples).unwrap();
        let statements = ttl.lines().filter(|l| l.ends_with(" .") && !l.starts_with("@prefix")).count();
        assert_eq!(statements, triples.len());
    }

    #[test]
    fn serialization_is_deterministic() {
        let (clusterings, reports) = fixture_graph();
        let triples = build_graph(&clusterings, &reports).unwrap();
        let mut reversed: Vec<Triple> = triples.clone();
        reversed.reverse();
        assert_eq!(
            serialize_turtle(&triples).unwrap(),
            serialize_turtle(&reversed).unwrap()
        );
        assert_eq!(serialize_dot(&triples), serialize_dot(&reversed));
    }

    #[test]
    fn every_event_has_one_detected_in_and_one_belongs_to() {
        let (clusterings, mut reports) = fixture_graph();
        for idx in 0..4 {
            reports[0].events.push(crate::events::Event {
                record_ref: (0, idx),
                cluster_id: idx % 2,
                distance: 5.0 + idx as f64,
                score_contribution: 1.0,
            });
        }
        let triples = build_graph(&clusterings, &reports).unwrap();
        for idx in 0..4 {
            let evt = format!("evt:0:{idx}");
            let count = |pred: &str| {
                triples
                    .iter()
                    .filter(|t| t.subject == evt && t.predicate == pred)
                    .count()
            };
            assert_eq!(count("detectedIn"), 1);
            assert_eq!(count("belongsTo"), 1);
        }
    }

    #[test]
    fn whitespace_in_iri_is_rejected() {
        let t = Triple::entity("win 0", "hasCluster", "clu:0:0");
        assert!(matches!(
            serialize_turtle(&[t]),
            Err(KgError::InvalidIri(_))
        ));
        let t = Triple::entity("win:0", "", "clu:0:0");
        assert!(serialize_turtle(&[t]).is_err());
    }

    #[test]
    fn empty_dot_graph_has_layout_defaults() {
        let dot = serialize_dot(&[]);
        assert_eq!(
            dot,
            "digraph kg {\n  rankdir=LR;\n  node [shape=box, fontsize=10];\n}\n"
        );
    }

    #[test]
    fn one_triple_dot_edge() {
        let t = Triple::entity("win:0", "hasCluster", "clu:0:0");
        let dot = serialize_dot(&[t]);
        assert!(dot.contains("  \"win:0\" -> \"clu:0:0\" [label=\"hasCluster\"];\n"));
    }

    #[test]
    fn turtle_golden_fixture() {
        let (clusterings, reports) = fixture_graph();
        let triples = build_graph(&clusterings, &reports).unwrap();
        let ttl = serialize_turtle(&triples).unwrap();
        let expected = include_str!("../tests/fixtures/graph8.ttl");
        assert_eq!(ttl, expected);
    }

    #[test]
    fn dot_golden_fixture() {
        let (clusterings, reports) = fixture_graph();
        let triples = build_graph(&clusterings, &reports).unwrap();
        let dot = serialize_dot(&triples);
        let expected = include_str!("../tests/fixtures/graph8.dot");
        assert_eq!(dot, expected);
    }

    #[test]
    fn random_graphs_roundtrip_statement_counts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(0..30);
            let triples: Vec<Triple> = (0..n)
                .map(|i| {
                    if rng.random::<bool>() {
                        Triple::entity(
                            format!("e:{}", rng.random_range(0..5)),
                            "linksTo",
                            format!("e:{i}"),
                        )
                    } else {
                        Triple::literal(
                            format!("e:{}", rng.random_range(0..5)),
                            "hasValue",
                            format!("{}", rng.random_range(0..100)),
                            LiteralKind::Integer,
                        )
                    }
                })
                .collect();
            let ttl = serialize_turtle(&triples).unwrap();
            let statements = ttl
                .lines()
                .filter(|l| l.ends_with(" .") && !l.starts_with("@prefix"))
                .count();
            assert_eq!(statements, triples.len());
        }
    }
}
