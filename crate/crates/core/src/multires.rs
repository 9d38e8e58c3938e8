//! One reservoir per sub-stream under a shared entry budget.
//!
//! Each stream's required sample size is `k_i / (1 + k_i * e^2)` for its
//! arrival count `k_i` and error bound `e`; the budget `M` is split
//! proportionally to those sizes, floored, and re-applied every
//! `realloc_every` arrivals. `M` counts reservoir entries, not bytes.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Record;
use crate::sampling::{Reservoir, SampleError};

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("e must lie in (0, 1), got {0}")]
    EOutOfRange(f64),
    #[error("budget M={m} is smaller than the number of active streams {streams}")]
    BudgetTooSmall { m: usize, streams: usize },
    #[error("no stream has received any arrivals")]
    NoActiveStreams,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sizing parameters shared by all reservoirs of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    /// One minus the confidence level.
    #[serde(default = "default_e")]
    pub e: f64,
    /// Total budgeted reservoir entries across all streams.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Arrivals between re-allocations.
    #[serde(default = "default_realloc")]
    pub realloc_every: u64,
}

fn default_e() -> f64 {
    0.05
}
fn default_m() -> usize {
    1000
}
fn default_realloc() -> u64 {
    1000
}

impl Default for AllocationPolicy {
    fn default() -> Self {
        AllocationPolicy {
            e: default_e(),
            m: default_m(),
            realloc_every: default_realloc(),
        }
    }
}

impl AllocationPolicy {
    pub fn validate(&self) -> Result<(), AllocError> {
        check_e(self.e)?;
        if self.m == 0 {
            return Err(AllocError::BudgetTooSmall { m: 0, streams: 1 });
        }
        if self.realloc_every == 0 {
            return Err(AllocError::NoActiveStreams);
        }
        Ok(())
    }
}

fn check_e(e: f64) -> Result<(), AllocError> {
    if e > 0.0 && e < 1.0 {
        Ok(())
    } else {
        Err(AllocError::EOutOfRange(e))
    }
}

/// Sample size for a population of `n` at error bound `e`: `N / (1 + N e^2)`.
pub fn sample_size(population: u64, e: f64) -> Result<f64, AllocError> {
    check_e(e)?;
    let n = population as f64;
    Ok(n / (1.0 + n * e * e))
}

/// Required reservoir size for a stream with `count` arrivals; 0 at count 0.
pub fn required_size(count: u64, e: f64) -> f64 {
    let k = count as f64;
    k / (1.0 + k * e * e)
}

/// Splits budget `m` proportionally to each stream's required size, floored.
///
/// Streams floored to zero are then raised to capacity 1, funded by the
/// largest allocation whenever the raise would overshoot `m`, so every
/// stream with at least one arrival keeps a live reservoir.
pub fn allocate(
    counts: &BTreeMap<String, u64>,
    e: f64,
    m: usize,
) -> Result<BTreeMap<String, usize>, AllocError> {
    check_e(e)?;
    let active: Vec<(&String, u64)> = counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(sid, &c)| (sid, c))
        .collect();
    if active.is_empty() {
        return Err(AllocError::NoActiveStreams);
    }
    if m < active.len() {
        return Err(AllocError::BudgetTooSmall {
            m,
            streams: active.len(),
        });
    }
    let sizes: Vec<f64> = active.iter().map(|&(_, c)| required_size(c, e)).collect();
    let total: f64 = sizes.iter().sum();
    let mut caps: BTreeMap<String, usize> = active
        .iter()
        .zip(&sizes)
        .map(|(&(sid, _), &r)| (sid.clone(), (m as f64 * r / total).floor() as usize))
        .collect();
    let mut used: usize = caps.values().sum();
    let starved: Vec<String> = caps
        .iter()
        .filter(|(_, &c)| c == 0)
        .map(|(sid, _)| sid.clone())
        .collect();
    for sid in starved {
        *caps.get_mut(&sid).unwrap() = 1;
        used += 1;
        if used > m {
            let richest = caps
                .iter()
                .filter(|(other, &c)| c > 1 && **other != sid)
                .max_by_key(|&(other, &c)| (c, std::cmp::Reverse(other.clone())))
                .map(|(other, _)| other.clone())
                .expect("budget >= active streams guarantees a donor");
            *caps.get_mut(&richest).unwrap() -= 1;
            used -= 1;
        }
    }
    debug_assert!(used <= m);
    Ok(caps)
}

/// Per-stream reservoirs plus arrival counters under one budget.
///
/// Single-writer: concurrent feeds must be merged into one arrival sequence
/// before the pool.
#[derive(Debug)]
pub struct ReservoirPool {
    policy: AllocationPolicy,
    reservoirs: BTreeMap<String, Reservoir>,
    counts: BTreeMap<String, u64>,
    arrivals: u64,
}

impl ReservoirPool {
    pub fn new(policy: AllocationPolicy) -> Result<Self, AllocError> {
        policy.validate()?;
        Ok(ReservoirPool {
            policy,
            reservoirs: BTreeMap::new(),
            counts: BTreeMap::new(),
            arrivals: 0,
        })
    }

    pub fn policy(&self) -> &AllocationPolicy {
        &self.policy
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn reservoirs(&self) -> &BTreeMap<String, Reservoir> {
        &self.reservoirs
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    /// Total live entries across streams.
    pub fn total_entries(&self) -> usize {
        self.reservoirs.values().map(|r| r.len()).sum()
    }

    /// Total capacity across streams; never exceeds the budget.
    pub fn total_capacity(&self) -> usize {
        self.reservoirs.values().map(|r| r.capacity()).sum()
    }

    /// Routes one record: counts it, re-allocates on schedule (and whenever
    /// a new stream appears), then offers it to its stream's weighted
    /// reservoir.
    pub fn on_arrival(&mut self, record: Record, rng: &mut impl Rng) -> Result<(), AllocError> {
        let sid = record.stream_id.clone();
        let is_new = !self.counts.contains_key(&sid);
        *self.counts.entry(sid.clone()).or_insert(0) += 1;
        if is_new {
            self.reservoirs.insert(sid.clone(), Reservoir::new(0));
        }
        self.arrivals += 1;
        if is_new || self.arrivals.is_multiple_of(self.policy.realloc_every) {
            self.rebalance(rng)?;
        }
        self.reservoirs
            .get_mut(&sid)
            .expect("registered above")
            .insert_weighted(record, rng)?;
        Ok(())
    }

    /// Recomputes capacities from current counts and applies them. Shrinks
    /// evict uniformly at random; grows let reservoirs refill naturally.
    pub fn rebalance(&mut self, rng: &mut impl Rng) -> Result<(), AllocError> {
        let caps = allocate(&self.counts, self.policy.e, self.policy.m)?;
        for (sid, cap) in caps {
            if let Some(res) = self.reservoirs.get_mut(&sid) {
                if res.capacity() != cap {
                    res.set_capacity(cap, rng);
                }
            }
        }
        Ok(())
    }

    /// All sampled records merged across streams, ordered by
    /// `(timestamp, stream_id)` with per-stream arrival order preserved.
    pub fn merged_sample(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .reservoirs
            .values()
            .flat_map(|r| r.contents())
            .collect();
        out.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.stream_id.cmp(&b.stream_id))
        });
        out
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            e: self.policy.e,
            m: self.policy.m,
            arrivals: self.arrivals,
            streams: self
                .counts
                .iter()
                .map(|(sid, &count)| {
                    let res = &self.reservoirs[sid];
                    (
                        sid.clone(),
                        StreamSnapshot {
                            count,
                            capacity: res.capacity(),
                            required: required_size(count, self.policy.e),
                            entries: res.contents(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Serializable view of a pool: per-stream count, capacity, required size
/// and the sampled entries.
#[derive(Debug, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub e: f64,
    pub m: usize,
    pub arrivals: u64,
    pub streams: BTreeMap<String, StreamSnapshot>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StreamSnapshot {
    pub count: u64,
    pub capacity: usize,
    pub required: f64,
    pub entries: Vec<Record>,
}

impl PoolSnapshot {
    pub fn write_json(&self, w: &mut impl Write) -> Result<(), AllocError> {
        serde_json::to_writer_pretty(&mut *w, self)
            .map_err(|e| AllocError::Sample(SampleError::Snapshot(e.to_string())))?;
        w.write_all(b"\n")?;
        Ok(())
    }
}
