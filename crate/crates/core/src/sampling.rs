//! Uniform and weighted random sampling, one-shot and reservoir.
//!
//! Weighted sampling without replacement assigns each record the key
//! `u^(1/w)` for an independent uniform `u` and keeps the k largest keys.
//! Keys are stored and compared in the log domain as `ln(u)/w`, a monotone
//! transform that avoids the underflow of `u^(1/w)` at large weights. The
//! reservoir form maintains the running top-k under a min-key heap, replacing
//! the minimum-key entry whenever a newcomer's key exceeds it, which keeps
//! the same selection distribution as the one-shot form.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Record;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("weight must be positive and finite, got {0}")]
    NonPositiveWeight(f64),
    #[error("u must lie in (0, 1], got {0}")]
    UOutOfRange(f64),
    #[error("sample size {k} exceeds population size {n}")]
    KExceedsPopulation { k: usize, n: usize },
    #[error("cannot draw from an empty population")]
    EmptyPopulation,
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Log-domain sampling key `ln(u) / weight`.
///
/// Ordering of the returned values equals the ordering of `u^(1/w)` exactly;
/// `u = 1` yields the maximal key `0`.
pub fn log_key(weight: f64, u: f64) -> Result<f64, SampleError> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(SampleError::NonPositiveWeight(weight));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(SampleError::UOutOfRange(u));
    }
    Ok(u.ln() / weight)
}

/// Uniform draw from (0, 1]; zero never occurs so keys stay finite.
fn draw_u(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn draw_log_key(weight: f64, rng: &mut impl Rng) -> Result<f64, SampleError> {
    log_key(weight, draw_u(rng))
}

/// A record with its sampling key.
#[derive(Debug, Clone)]
pub struct KeyedEntry {
    pub record: Record,
    pub log_key: f64,
}

/// Heap handle ordered so the entry to evict first compares smallest:
/// lower key first, and among equal keys the later arrival.
#[derive(Debug)]
struct HeapSlot {
    log_key: f64,
    seq: u64,
    slot: usize,
    gen: u64,
}

impl PartialEq for HeapSlot {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapSlot {}
impl PartialOrd for HeapSlot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapSlot {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_key
            .total_cmp(&other.log_key)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Fixed-capacity sample with O(log k) minimum-key access.
///
/// Drive one reservoir with a single insert discipline: either
/// [`insert_weighted`](Reservoir::insert_weighted) (key-based, holds the k
/// largest keys seen) or [`insert_uniform`](Reservoir::insert_uniform)
/// (classic acceptance k/i with a uniformly random victim). A reservoir is a
/// single-writer structure; snapshots may be taken between insertions.
#[derive(Debug)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    entries: Vec<KeyedEntry>,
    slot_seq: Vec<u64>,
    slot_gen: Vec<u64>,
    heap: BinaryHeap<std::cmp::Reverse<HeapSlot>>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Self {
        Reservoir {
            capacity,
            seen: 0,
            entries: Vec::with_capacity(capacity),
            slot_seq: Vec::with_capacity(capacity),
            slot_gen: Vec::with_capacity(capacity),
            heap: BinaryHeap::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records offered so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Offers a record under the weighted discipline.
    ///
    /// Under-full reservoirs admit unconditionally; otherwise the record is
    /// admitted iff its key exceeds the current minimum, whose entry it
    /// replaces. Ties keep the incumbent. Returns whether the record was
    /// admitted.
    pub fn insert_weighted(
        &mut self,
        record: Record,
        rng: &mut impl Rng,
    ) -> Result<bool, SampleError> {
        let key = draw_log_key(record.weight, rng)?;
        let seq = self.seen;
        self.seen += 1;
        if self.capacity == 0 {
            return Ok(false);
        }
        if self.entries.len() < self.capacity {
            self.push_slot(KeyedEntry { record, log_key: key }, seq);
            return Ok(true);
        }
        self.drop_stale();
        let min = self.heap.peek().expect("full reservoir has a minimum");
        if key > min.0.log_key {
            let slot = min.0.slot;
            self.replace_slot(slot, KeyedEntry { record, log_key: key }, seq);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Offers a record under the uniform discipline (acceptance k/i).
    ///
    /// The i-th record is admitted with probability k/i and replaces a
    /// uniformly random incumbent. Weights are ignored; stored entries carry
    /// the neutral key 0. Returns whether the record was admitted.
    pub fn insert_uniform(&mut self, record: Record, rng: &mut impl Rng) -> bool {
        let seq = self.seen;
        self.seen += 1;
        if self.capacity == 0 {
            return false;
        }
        if self.entries.len() < self.capacity {
            self.push_slot(KeyedEntry { record, log_key: 0.0 }, seq);
            return true;
        }
        let j = rng.random_range(0..self.seen) as usize;
        if j < self.capacity {
            self.replace_slot(j, KeyedEntry { record, log_key: 0.0 }, seq);
            true
        } else {
            false
        }
    }

    /// Current sample in arrival order; does not mutate the reservoir.
    pub fn contents(&self) -> Vec<Record> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| self.slot_seq[i]);
        order
            .into_iter()
            .map(|i| self.entries[i].record.clone())
            .collect()
    }

    /// Entries with their keys, in arrival order.
    pub fn keyed_entries(&self) -> Vec<&KeyedEntry> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| self.slot_seq[i]);
        order.into_iter().map(|i| &self.entries[i]).collect()
    }

    /// Changes capacity. Shrinking below the current fill evicts uniformly
    /// random incumbents; growing leaves the sample untouched and lets the
    /// reservoir refill through its normal admission rule.
    pub fn set_capacity(&mut self, capacity: usize, rng: &mut impl Rng) {
        self.capacity = capacity;
        while self.entries.len() > capacity {
            let victim = rng.random_range(0..self.entries.len());
            self.entries.swap_remove(victim);
            self.slot_seq.swap_remove(victim);
            self.slot_gen.swap_remove(victim);
        }
        self.rebuild_heap();
    }

    fn push_slot(&mut self, entry: KeyedEntry, seq: u64) {
        let slot = self.entries.len();
        self.heap.push(std::cmp::Reverse(HeapSlot {
            log_key: entry.log_key,
            seq,
            slot,
            gen: 0,
        }));
        self.entries.push(entry);
        self.slot_seq.push(seq);
        self.slot_gen.push(0);
    }

    fn replace_slot(&mut self, slot: usize, entry: KeyedEntry, seq: u64) {
        self.slot_gen[slot] += 1;
        self.heap.push(std::cmp::Reverse(HeapSlot {
            log_key: entry.log_key,
            seq,
            slot,
            gen: self.slot_gen[slot],
        }));
        self.entries[slot] = entry;
        self.slot_seq[slot] = seq;
        self.drop_stale();
    }

    /// Pops lazily deleted heap nodes so the top is the live minimum.
    fn drop_stale(&mut self) {
        while let Some(top) = self.heap.peek() {
            let s = &top.0;
            if s.slot < self.slot_gen.len() && self.slot_gen[s.slot] == s.gen {
                break;
            }
            self.heap.pop();
        }
    }

    fn rebuild_heap(&mut self) {
        self.heap.clear();
        for (slot, entry) in self.entries.iter().enumerate() {
            self.slot_gen[slot] = 0;
            self.heap.push(std::cmp::Reverse(HeapSlot {
                log_key: entry.log_key,
                seq: self.slot_seq[slot],
                slot,
                gen: 0,
            }));
        }
    }
}

/// Weighted random sampling without replacement: k distinct records, the
/// j-th draw taken with probability w_j over the remaining total weight.
///
/// Realized by the one-shot key scheme: every record gets the key
/// `ln(u)/w` and the k largest keys win. The result is ordered by
/// descending key, which matches the order sequential draws would
/// produce them.
pub fn weighted_without_replacement(
    population: &[Record],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Record>, SampleError> {
    if k > population.len() {
        return Err(SampleError::KExceedsPopulation {
            k,
            n: population.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(population.len());
    for (i, record) in population.iter().enumerate() {
        keyed.push((draw_log_key(record.weight, rng)?, i));
    }
    // Descending key; ties resolved toward the earlier arrival.
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(keyed
        .into_iter()
        .take(k)
        .map(|(_, i)| population[i].clone())
        .collect())
}

/// k independent draws, each with probability w_j / sum(w); duplicates
/// permitted.
pub fn weighted_with_replacement(
    population: &[Record],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Record>, SampleError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if population.is_empty() {
        return Err(SampleError::EmptyPopulation);
    }
    for r in population {
        if !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(SampleError::NonPositiveWeight(r.weight));
        }
    }
    let dist = WeightedIndex::new(population.iter().map(|r| r.weight))
        .map_err(|_| SampleError::EmptyPopulation)?;
    Ok((0..k)
        .map(|_| population[dist.sample(rng)].clone())
        .collect())
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct SnapshotHeader {
    capacity: usize,
    seen: u64,
    seed: u64,
}

/// Writes a reservoir snapshot: a JSON header line with `capacity`, `seen`
/// and the caller's `seed`, then one record per line.
pub fn write_snapshot_jsonl(
    w: &mut impl Write,
    reservoir: &Reservoir,
    seed: u64,
) -> Result<(), SampleError> {
    let header = SnapshotHeader {
        capacity: reservoir.capacity(),
        seen: reservoir.seen(),
        seed,
    };
    serde_json::to_writer(&mut *w, &header).map_err(|e| SampleError::Snapshot(e.to_string()))?;
    w.write_all(b"\n")?;
    for record in reservoir.contents() {
        serde_json::to_writer(&mut *w, &record)
            .map_err(|e| SampleError::Snapshot(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot_jsonl`]; returns
/// `(capacity, seen, seed, records)`.
pub fn read_snapshot_jsonl(
    r: &mut impl BufRead,
) -> Result<(usize, u64, u64, Vec<Record>), SampleError> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SampleError::Snapshot("missing header line".to_string()))??;
    let header: SnapshotHeader = serde_json::from_str(&header_line)
        .map_err(|e| SampleError::Snapshot(format!("header: {e}")))?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| SampleError::Snapshot(e.to_string()))?,
        );
    }
    Ok((header.capacity, header.seen, header.seed, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn rec(id: u64, weight: f64) -> Record {
        Record {
            stream_id: "s".to_string(),
            timestamp: id,
            features: vec![id as f64],
            weight,
            label: None,
        }
    }

    fn recs(weights: &[f64]) -> Vec<Record> {
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| rec(i as u64, w))
            .collect()
    }

    #[test]
    fn log_key_examples() {
        assert!((log_key(1.0, 0.5).unwrap() - (-std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_key(7.0, 1.0).unwrap(), 0.0);
        // (w=2, u=0.25) equals (w=1, u=0.5) because 0.25^(1/2) = 0.5^(1/1).
        let a = log_key(2.0, 0.25).unwrap();
        let b = log_key(1.0, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((0.25f64.powf(1.0 / 2.0) - 0.5f64.powf(1.0)).abs() < 1e-12);
    }

    #[test]
    fn log_key_rejects_bad_inputs() {
        assert!(matches!(
            log_key(0.0, 0.5),
            Err(SampleError::NonPositiveWeight(_))
        ));
        assert!(matches!(
            log_key(-1.0, 0.5),
            Err(SampleError::NonPositiveWeight(_))
        ));
        assert!(matches!(log_key(1.0, 0.0), Err(SampleError::UOutOfRange(_))));
        assert!(matches!(log_key(1.0, 1.5), Err(SampleError::UOutOfRange(_))));
    }

    #[test]
    fn one_shot_boundary_cases() {
        let pop = recs(&[1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(weighted_without_replacement(&pop, 0, &mut rng)
            .unwrap()
            .is_empty());
        let all = weighted_without_replacement(&pop, 3, &mut rng).unwrap();
        let mut ids: Vec<u64> = all.iter().map(|r| r.timestamp).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(matches!(
            weighted_without_replacement(&pop, 4, &mut rng),
            Err(SampleError::KExceedsPopulation { k: 4, n: 3 })
        ));
    }

    #[test]
    fn one_shot_first_pick_follows_weights() {
        // Weights (1,1,2): the heavy item wins the single draw with
        // probability w_i / sum w = 2/4 = 0.5 exactly.
        let pop = recs(&[1.0, 1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 100_000;
        let mut heavy = 0u32;
        for _ in 0..trials {
            let pick = &weighted_without_replacement(&pop, 1, &mut rng).unwrap()[0];
            if pick.timestamp == 2 {
                heavy += 1;
            }
        }
        let freq = heavy as f64 / trials as f64;
        assert!((0.49..=0.51).contains(&freq), "freq {freq}");
    }

    #[test]
    fn with_replacement_examples() {
        let pop = recs(&[1.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let mut heavy = 0u32;
        for _ in 0..trials {
            let pick = &weighted_with_replacement(&pop, 1, &mut rng).unwrap()[0];
            if pick.timestamp == 1 {
                heavy += 1;
            }
        }
        let freq = heavy as f64 / trials as f64;
        assert!((0.74..=0.76).contains(&freq), "freq {freq}");

        assert!(weighted_with_replacement(&pop, 0, &mut rng)
            .unwrap()
            .is_empty());
        let single = recs(&[2.0]);
        let five = weighted_with_replacement(&single, 5, &mut rng).unwrap();
        assert_eq!(five.len(), 5);
        assert!(five.iter().all(|r| r.timestamp == 0));
        assert!(matches!(
            weighted_with_replacement(&[], 1, &mut rng),
            Err(SampleError::EmptyPopulation)
        ));
    }

    #[test]
    fn uniform_reservoir_fill_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut res = Reservoir::new(5);
        for i in 0..3 {
            assert!(res.insert_uniform(rec(i, 1.0), &mut rng));
        }
        assert_eq!(res.len(), 3);
        assert_eq!(res.contents().len(), 3);
    }

    #[test]
    fn uniform_reservoir_is_uniform() {
        // k=1 over n=5: every record retained with probability 1/5.
        let trials = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = [0u32; 5];
        for _ in 0..trials {
            let mut res = Reservoir::new(1);
            for i in 0..5 {
                res.insert_uniform(rec(i, 1.0), &mut rng);
            }
            counts[res.contents()[0].timestamp as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.2).abs() <= 0.01, "record {i} freq {freq}");
        }
    }

    #[test]
    fn weighted_reservoir_fill_phase_and_contents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut res = Reservoir::new(5);
        for i in 0..3 {
            assert!(res.insert_weighted(rec(i, 1.0), &mut rng).unwrap());
        }
        let ids: Vec<u64> = res.contents().iter().map(|r| r.timestamp).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(matches!(
            res.insert_weighted(rec(9, 0.0), &mut rng),
            Err(SampleError::NonPositiveWeight(_))
        ));
    }

    #[test]
    fn weighted_reservoir_uniform_case_subsets() {
        // Equal weights, k=2 over n=4: all C(4,2)=6 subsets equiprobable.
        let trials = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut counts: HashMap<(u64, u64), u32> = HashMap::new();
        for _ in 0..trials {
            let mut res = Reservoir::new(2);
            for i in 0..4 {
                res.insert_weighted(rec(i, 1.0), &mut rng).unwrap();
            }
            let mut ids: Vec<u64> = res.contents().iter().map(|r| r.timestamp).collect();
            ids.sort_unstable();
            *counts.entry((ids[0], ids[1])).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (&subset, &c) in &counts {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() <= 0.01,
                "subset {subset:?} freq {freq}"
            );
        }
    }

    #[test]
    fn huge_weight_dominates() {
        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut kept = 0u32;
        for _ in 0..trials {
            let mut res = Reservoir::new(1);
            for i in 0..3 {
                res.insert_weighted(rec(i, 1.0), &mut rng).unwrap();
            }
            res.insert_weighted(rec(99, 1e9), &mut rng).unwrap();
            if res.contents()[0].timestamp == 99 {
                kept += 1;
            }
        }
        let freq = kept as f64 / trials as f64;
        assert!(freq >= 0.999, "freq {freq}");
    }

    #[test]
    fn reservoir_holds_top_keys() {
        // Oracle: replay the same rng draws and fully sort all keys.
        let n = 200;
        let k = 16;
        let weights: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut res = Reservoir::new(k);
        for (i, &w) in weights.iter().enumerate() {
            res.insert_weighted(rec(i as u64, w), &mut rng).unwrap();
        }

        let mut oracle_rng = ChaCha8Rng::seed_from_u64(8);
        let mut keys: Vec<(f64, u64)> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (log_key(w, draw_u(&mut oracle_rng)).unwrap(), i as u64))
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let mut expected: Vec<u64> = keys.into_iter().take(k).map(|(_, i)| i).collect();
        expected.sort_unstable();

        let mut got: Vec<u64> = res.contents().iter().map(|r| r.timestamp).collect();
        got.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_reservoir_contents() {
        let res = Reservoir::new(3);
        assert!(res.contents().is_empty());
        assert_eq!(res.seen(), 0);
    }

    #[test]
    fn replacement_count_matches_harmonic_sum() {
        // Expected replacements after the fill phase: sum_{i=k+1..n} k/i.
        let k = 10;
        let n = 1000;
        let expected: f64 = (k + 1..=n).map(|i| k as f64 / i as f64).sum();
        let trials = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut total = 0u64;
        for _ in 0..trials {
            let mut res = Reservoir::new(k);
            for i in 0..n {
                if res.insert_uniform(rec(i as u64, 1.0), &mut rng) && i >= k {
                    total += 1;
                }
            }
        }
        let mean = total as f64 / trials as f64;
        assert!(
            (mean - expected).abs() <= 0.1 * expected,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn shrink_keeps_subset_grow_keeps_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut res = Reservoir::new(10);
        for i in 0..10 {
            res.insert_weighted(rec(i, 1.0), &mut rng).unwrap();
        }
        let before: Vec<u64> = res.contents().iter().map(|r| r.timestamp).collect();
        res.set_capacity(5, &mut rng);
        let after: Vec<u64> = res.contents().iter().map(|r| r.timestamp).collect();
        assert_eq!(after.len(), 5);
        assert!(after.iter().all(|id| before.contains(id)));

        res.set_capacity(8, &mut rng);
        assert_eq!(res.contents().len(), 5);
        for i in 10..13 {
            res.insert_weighted(rec(i, 1.0), &mut rng).unwrap();
        }
        assert_eq!(res.contents().len(), 8);
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut res = Reservoir::new(4);
            for i in 0..100 {
                res.insert_weighted(rec(i, 1.0 + (i % 3) as f64), &mut rng)
                    .unwrap();
            }
            res.contents()
                .iter()
                .map(|r| r.timestamp)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_domain_order_matches_power_domain_at_scale() {
        // 10^5 seeded (u, w) pairs, away from power-domain underflow.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                (
                    1e-3 + 0.999 * rng.random::<f64>(),
                    0.1 + 99.9 * rng.random::<f64>(),
                )
            })
            .collect();
        let mut by_log: Vec<usize> = (0..pairs.len()).collect();
        by_log.sort_by(|&a, &b| {
            let ka = log_key(pairs[a].1, pairs[a].0).unwrap();
            let kb = log_key(pairs[b].1, pairs[b].0).unwrap();
            ka.total_cmp(&kb).then(a.cmp(&b))
        });
        let mut by_pow: Vec<usize> = (0..pairs.len()).collect();
        by_pow.sort_by(|&a, &b| {
            let ka = pairs[a].0.powf(1.0 / pairs[a].1);
            let kb = pairs[b].0.powf(1.0 / pairs[b].1);
            ka.total_cmp(&kb).then(a.cmp(&b))
        });
        assert_eq!(by_log, by_pow);
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut res = Reservoir::new(3);
        for i in 0..10 {
            res.insert_weighted(rec(i, 1.0), &mut rng).unwrap();
        }
        let mut buf = Vec::new();
        write_snapshot_jsonl(&mut buf, &res, 3).unwrap();
        let (capacity, seen, seed, records) =
            read_snapshot_jsonl(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(capacity, 3);
        assert_eq!(seen, 10);
        assert_eq!(seed, 3);
        assert_eq!(records, res.contents());
    }

    proptest! {
        // Sorting by ln(u)/w equals sorting by u^(1/w). Ranges stay clear of
        // the power-domain underflow that the log form exists to avoid.
        #[test]
        fn log_domain_preserves_key_order(
            pairs in proptest::collection::vec((1e-3f64..1.0, 0.1f64..100.0), 2..50)
        ) {
            let mut by_log: Vec<usize> = (0..pairs.len()).collect();
            by_log.sort_by(|&a, &b| {
                let ka = log_key(pairs[a].1, pairs[a].0).unwrap();
                let kb = log_key(pairs[b].1, pairs[b].0).unwrap();
                ka.total_cmp(&kb).then(a.cmp(&b))
            });
            let mut by_pow: Vec<usize> = (0..pairs.len()).collect();
            by_pow.sort_by(|&a, &b| {
                let ka = pairs[a].0.powf(1.0 / pairs[a].1);
                let kb = pairs[b].0.powf(1.0 / pairs[b].1);
                ka.total_cmp(&kb).then(a.cmp(&b))
            });
            prop_assert_eq!(by_log, by_pow);
        }

        // |entries| = min(capacity, seen) holds through arbitrary offer counts.
        #[test]
        fn fill_invariant(k in 1usize..20, n in 0usize..100, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut res = Reservoir::new(k);
            for i in 0..n {
                res.insert_weighted(rec(i as u64, 1.0 + (i % 5) as f64), &mut rng).unwrap();
            }
            prop_assert_eq!(res.len(), k.min(n));
            prop_assert_eq!(res.seen(), n as u64);
        }
    }
}
