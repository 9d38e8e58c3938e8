//! Windowed streaming k-means with SSE diagnostics.
//!
//! Records are cut into windows of at most `window_size` records, or earlier
//! when `window_timeout` timestamp units elapse since the window opened. The
//! first window initializes centroids from random medoids (actual records);
//! every later window warm-starts from the previous window's final
//! centroids, which keeps cluster identities stable across windows. Each
//! window reports SSE per cluster, per dimension and in total.
//!
//! Assignment for q = 2 compares squared Euclidean distances (monotone in
//! the metric and cheaper); reported SSEs are squared Euclidean distances
//! regardless of the assignment order q.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Record;

/// Medoid draws attempted for a cold start; the draw with the lowest final
/// SSE wins. A single uniform draw lands two medoids in one component often
/// enough that well-separated mixtures are merged in a sizable fraction of
/// runs; a handful of draws makes that failure mode negligible while keeping
/// the initialization a plain random-medoid one.
const COLD_START_DRAWS: usize = 5;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("Minkowski order must be >= 1, got {0}")]
    QOutOfRange(f64),
    #[error("dimension index {index} out of range for d={d}")]
    DimensionOutOfRange { index: usize, d: usize },
    #[error("window holds {n} records but k={k} requires at least k for a cold start")]
    WindowTooSmall { n: usize, k: usize },
    #[error("non-finite feature in window")]
    NonFiniteFeature,
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// How a window was closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedBy {
    Full,
    Timeout,
}

/// A bounded batch of records, the clustering unit.
#[derive(Debug, Clone)]
pub struct Window {
    pub records: Vec<Record>,
    pub opened_at: u64,
    pub closed_by: ClosedBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub position: Vec<f64>,
    pub cluster_id: usize,
}

/// Full diagnostics of one window's clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowClustering {
    pub window_seq: u64,
    pub closed_by: ClosedBy,
    pub centroids: Vec<Centroid>,
    /// Record index -> cluster id, computed against the final centroids.
    pub assignment: Vec<usize>,
    pub sse_per_cluster: Vec<f64>,
    /// k x d matrix of per-dimension SSEs.
    pub sse_per_dimension: Vec<Vec<f64>>,
    pub sse_total: f64,
    pub iterations: usize,
}

/// Clustering parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    /// Minkowski order used for assignment.
    pub q: f64,
    pub window_size: usize,
    /// Timestamp units after which an open window closes.
    pub window_timeout: u64,
    pub max_iterations: usize,
    /// Centroid-shift convergence tolerance.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 3,
            q: 2.0,
            window_size: 256,
            window_timeout: u64::MAX,
            max_iterations: 100,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k == 0 {
            return Err(ClusterError::InvalidConfig("k must be positive".into()));
        }
        if self.k > self.window_size {
            return Err(ClusterError::InvalidConfig(format!(
                "k ({}) exceeds window_size ({})",
                self.k, self.window_size
            )));
        }
        if self.q < 1.0 {
            return Err(ClusterError::QOutOfRange(self.q));
        }
        if self.max_iterations == 0 {
            return Err(ClusterError::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ClusterError::InvalidConfig(
                "epsilon must be positive and finite".into(),
            ));
        }
        if self.window_timeout == 0 {
            return Err(ClusterError::InvalidConfig(
                "window_timeout must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Minkowski distance `(sum |a_i - b_i|^q)^(1/q)`; Manhattan at q = 1,
/// Euclidean at q = 2.
pub fn minkowski(a: &[f64], b: &[f64], q: f64) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::DimensionMismatch(a.len(), b.len()));
    }
    if q < 1.0 {
        return Err(ClusterError::QOutOfRange(q));
    }
    if q == 2.0 {
        return Ok(sq_euclid(a, b).sqrt());
    }
    if q == 1.0 {
        return Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum());
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(q)).sum();
    Ok(sum.powf(1.0 / q))
}

fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Maps every record to an argmin-distance centroid; ties go to the lowest
/// cluster id.
pub fn assign(records: &[Record], centroids: &[Centroid], q: f64) -> Vec<usize> {
    records
        .iter()
        .map(|r| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in centroids {
                let d = if q == 2.0 {
                    sq_euclid(&r.features, &c.position)
                } else {
                    minkowski(&r.features, &c.position, q).unwrap_or(f64::INFINITY)
                };
                if d < best_d {
                    best_d = d;
                    best = c.cluster_id;
                }
            }
            best
        })
        .collect()
}

/// Coordinate-wise means per cluster. An empty cluster is re-seeded at the
/// record farthest from its assigned centroid (each repair consumes its
/// record so two empty clusters never share a seed).
pub fn update_centroids(records: &[Record], assignment: &[usize], k: usize) -> Vec<Centroid> {
    debug_assert_eq!(records.len(), assignment.len());
    let d = records.first().map(|r| r.dim()).unwrap_or(0);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (r, &c) in records.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&r.features) {
            *s += v;
        }
    }
    let mut centroids: Vec<Centroid> = (0..k)
        .map(|c| Centroid {
            position: if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                vec![0.0; d]
            },
            cluster_id: c,
        })
        .collect();

    let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empties.is_empty() {
        let mut taken = vec![false; records.len()];
        for c in empties {
            let mut far_idx = 0usize;
            let mut far_d = -1.0;
            for (i, r) in records.iter().enumerate() {
                if taken[i] || counts[assignment[i]] <= 1 {
                    continue;
                }
                let dist = sq_euclid(&r.features, &centroids[assignment[i]].position);
                if dist > far_d {
                    far_d = dist;
                    far_idx = i;
                }
            }
            taken[far_idx] = true;
            centroids[c].position = records[far_idx].features.clone();
        }
    }
    centroids
}

/// SSE of one cluster: sum of squared Euclidean distances of its members to
/// the centroid.
pub fn sse_cluster<'a>(
    members: impl IntoIterator<Item = &'a [f64]>,
    centroid: &[f64],
) -> f64 {
    members
        .into_iter()
        .map(|m| {
            debug_assert_eq!(m.len(), centroid.len());
            sq_euclid(m, centroid)
        })
        .sum()
}

/// SSE of one cluster restricted to dimension `t`; summing over all t
/// reproduces [`sse_cluster`].
pub fn sse_dimension<'a>(
    members: impl IntoIterator<Item = &'a [f64]>,
    centroid: &[f64],
    t: usize,
) -> Result<f64, ClusterError> {
    if t >= centroid.len() {
        return Err(ClusterError::DimensionOutOfRange {
            index: t,
            d: centroid.len(),
        });
    }
    Ok(members
        .into_iter()
        .map(|m| {
            let diff = m[t] - centroid[t];
            diff * diff
        })
        .sum())
}

/// Total clustering SSE: the sum of the per-cluster SSEs.
pub fn sse_total(sse_per_cluster: &[f64]) -> f64 {
    sse_per_cluster.iter().sum()
}

fn member_features<'a>(
    records: &'a [Record],
    assignment: &'a [usize],
    cluster: usize,
) -> impl Iterator<Item = &'a [f64]> {
    records
        .iter()
        .zip(assignment)
        .filter(move |(_, &c)| c == cluster)
        .map(|(r, _)| r.features.as_slice())
}

struct LloydRun {
    centroids: Vec<Centroid>,
    assignment: Vec<usize>,
    iterations: usize,
    sse_total: f64,
}

fn lloyd(
    records: &[Record],
    mut centroids: Vec<Centroid>,
    config: &ClusterConfig,
) -> LloydRun {
    let k = config.k;
    let mut iterations = 0;
    let mut prev_sse = f64::INFINITY;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let assignment = assign(records, &centroids, config.q);
        let next = update_centroids(records, &assignment, k);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_euclid(&a.position, &b.position).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let sse: f64 = (0..k)
            .map(|c| sse_cluster(member_features(records, &assignment, c), &centroids[c].position))
            .sum();
        // Lloyd's objective never increases; the slack absorbs rounding.
        assert!(
            sse <= prev_sse * (1.0 + 1e-9) + f64::MIN_POSITIVE,
            "SSE rose from {prev_sse} to {sse}"
        );
        prev_sse = sse;
        if shift < config.epsilon {
            break;
        }
    }
    // Re-assign against the final centroids so the stored assignment is
    // reproducible from (records, centroids) alone.
    let assignment_final = assign(records, &centroids, config.q);
    let sse: f64 = (0..k)
        .map(|c| {
            sse_cluster(
                member_features(records, &assignment_final, c),
                &centroids[c].position,
            )
        })
        .sum();
    LloydRun {
        centroids,
        assignment: assignment_final,
        iterations,
        sse_total: sse,
    }
}

/// Clusters one window.
///
/// Without `warm_start`, initial centroids are k distinct records chosen
/// uniformly without replacement (best of [`COLD_START_DRAWS`] draws by
/// final SSE); with it, the given centroids are used as-is. Lloyd iterations
/// run until the maximum centroid shift drops below `epsilon` or
/// `max_iterations` is reached.
pub fn cluster_window(
    window: &Window,
    config: &ClusterConfig,
    warm_start: Option<&[Centroid]>,
    rng: &mut impl Rng,
) -> Result<WindowClustering, ClusterError> {
    config.validate()?;
    let records = &window.records;
    let k = config.k;
    if records.is_empty() {
        return Err(ClusterError::WindowTooSmall { n: 0, k });
    }
    let d = records[0].dim();
    for r in records {
        if r.dim() != d {
            return Err(ClusterError::DimensionMismatch(d, r.dim()));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFiniteFeature);
        }
    }

    let run = match warm_start {
        Some(warm) => {
            if warm.len() != k {
                return Err(ClusterError::InvalidConfig(format!(
                    "warm start has {} centroids, config wants k={k}",
                    warm.len()
                )));
            }
            if warm.iter().any(|c| c.position.len() != d) {
                return Err(ClusterError::DimensionMismatch(d, warm[0].position.len()));
            }
            lloyd(records, warm.to_vec(), config)
        }
        None => {
            if records.len() < k {
                return Err(ClusterError::WindowTooSmall {
                    n: records.len(),
                    k,
                });
            }
            let mut best: Option<LloydRun> = None;
            for _ in 0..COLD_START_DRAWS {
                let picks = rand::seq::index::sample(rng, records.len(), k);
                let medoids: Vec<Centroid> = picks
                    .iter()
                    .enumerate()
                    .map(|(cluster_id, idx)| Centroid {
                        position: records[idx].features.clone(),
                        cluster_id,
                    })
                    .collect();
                let run = lloyd(records, medoids, config);
                if best.as_ref().is_none_or(|b| run.sse_total < b.sse_total) {
                    best = Some(run);
                }
            }
            best.expect("at least one draw")
        }
    };

    let sse_per_cluster: Vec<f64> = (0..k)
        .map(|c| {
            sse_cluster(
                member_features(records, &run.assignment, c),
                &run.centroids[c].position,
            )
        })
        .collect();
    let sse_per_dimension: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..d)
                .map(|t| {
                    sse_dimension(
                        member_features(records, &run.assignment, c),
                        &run.centroids[c].position,
                        t,
                    )
                    .expect("t < d")
                })
                .collect()
        })
        .collect();
    Ok(WindowClustering {
        window_seq: 0,
        closed_by: window.closed_by,
        centroids: run.centroids,
        assignment: run.assignment,
        sse_per_cluster: sse_per_cluster.clone(),
        sse_per_dimension,
        sse_total: sse_total(&sse_per_cluster),
        iterations: run.iterations,
    })
}

/// Cuts a record stream into windows and clusters each one.
///
/// Window 0 uses medoid initialization; window s >= 1 warm-starts from
/// window s-1's final centroids. A timeout-closed window with fewer than k
/// records is merged into the next window instead of clustered. The end of
/// the stream closes the open window as a timeout; that trailing window is
/// clustered when a warm start exists or it holds at least k records, and
/// discarded otherwise. Records are dropped once their window is emitted.
///
/// The sink receives clusterings in `window_seq` order. Returns the number
/// of windows emitted.
pub fn run_stream<I, F>(
    source: I,
    config: &ClusterConfig,
    mut sink: F,
) -> Result<u64, ClusterError>
where
    I: IntoIterator<Item = Record>,
    F: FnMut(&WindowClustering) -> Result<(), std::io::Error>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buf: Vec<Record> = Vec::with_capacity(config.window_size);
    let mut opened_at = 0u64;
    let mut warm: Option<Vec<Centroid>> = None;
    let mut emitted = 0u64;

    let emit = |records: Vec<Record>,
                    opened_at: u64,
                    closed_by: ClosedBy,
                    warm: &mut Option<Vec<Centroid>>,
                    emitted: &mut u64,
                    rng: &mut ChaCha8Rng,
                    sink: &mut F|
     -> Result<(), ClusterError> {
        let window = Window {
            records,
            opened_at,
            closed_by,
        };
        let mut clustering = cluster_window(&window, config, warm.as_deref(), rng)?;
        clustering.window_seq = *emitted;
        *warm = Some(clustering.centroids.clone());
        sink(&clustering)?;
        *emitted += 1;
        Ok(())
    };

    for record in source {
        if !buf.is_empty() && record.timestamp.saturating_sub(opened_at) >= config.window_timeout
        {
            if buf.len() >= config.k {
                let records = std::mem::take(&mut buf);
                emit(
                    records,
                    opened_at,
                    ClosedBy::Timeout,
                    &mut warm,
                    &mut emitted,
                    &mut rng,
                    &mut sink,
                )?;
            }
            // Otherwise the records stay buffered and fold into the next
            // window, which re-opens at the incoming record.
            opened_at = record.timestamp;
        }
        if buf.is_empty() {
            opened_at = record.timestamp;
        }
        buf.push(record);
        if buf.len() == config.window_size {
            let records = std::mem::take(&mut buf);
            emit(
                records,
                opened_at,
                ClosedBy::Full,
                &mut warm,
                &mut emitted,
                &mut rng,
                &mut sink,
            )?;
        }
    }
    if !buf.is_empty() && (warm.is_some() || buf.len() >= config.k) {
        emit(
            buf,
            opened_at,
            ClosedBy::Timeout,
            &mut warm,
            &mut emitted,
            &mut rng,
            &mut sink,
        )?;
    }
    Ok(emitted)
}

/// One line of the windows JSONL file; the persisted view of a
/// [`WindowClustering`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_seq: u64,
    pub closed_by: ClosedBy,
    pub n_records: usize,
    pub iterations: usize,
    pub centroids: Vec<Vec<f64>>,
    pub sse_per_cluster: Vec<f64>,
    pub sse_per_dimension: Vec<Vec<f64>>,
    pub sse_total: f64,
}

impl From<&WindowClustering> for WindowSummary {
    fn from(c: &WindowClustering) -> Self {
        WindowSummary {
            window_seq: c.window_seq,
            closed_by: c.closed_by,
            n_records: c.assignment.len(),
            iterations: c.iterations,
            centroids: c.centroids.iter().map(|c| c.position.clone()).collect(),
            sse_per_cluster: c.sse_per_cluster.clone(),
            sse_per_dimension: c.sse_per_dimension.clone(),
            sse_total: c.sse_total,
        }
    }
}

/// Appends one window document to a JSONL results stream.
pub fn write_window_jsonl(
    w: &mut impl Write,
    clustering: &WindowClustering,
) -> Result<(), std::io::Error> {
    let summary = WindowSummary::from(clustering);
    serde_json::to_writer(&mut *w, &summary)?;
    w.write_all(b"\n")
}

/// Reads every window document from a JSONL results stream.
pub fn read_windows_jsonl(
    r: impl std::io::BufRead,
) -> Result<Vec<WindowSummary>, ClusterError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            ClusterError::InvalidConfig(format!("malformed window document: {e}"))
        })?);
    }
    Ok(out)
}

impl WindowSummary {
    /// Rebuilds a clustering view for export. The record assignment is not
    /// persisted; recompute it with [`assign`] against these centroids when
    /// needed.
    pub fn to_clustering(&self) -> WindowClustering {
        WindowClustering {
            window_seq: self.window_seq,
            closed_by: self.closed_by,
            centroids: self
                .centroids
                .iter()
                .enumerate()
                .map(|(cluster_id, position)| Centroid {
                    position: position.clone(),
                    cluster_id,
                })
                .collect(),
            assignment: Vec::new(),
            sse_per_cluster: self.sse_per_cluster.clone(),
            sse_per_dimension: self.sse_per_dimension.clone(),
            sse_total: self.sse_total,
            iterations: self.iterations,
        }
    }
}
