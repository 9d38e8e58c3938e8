//! Sampling micro-benchmark grid.
//!
//! Axes: K x data mode (dataset fixture / per-run random) x replacement x
//! family (uniform / weighted). Each cell times one full sampling pass per
//! loop over `repeats` loops, after one untimed warm-up loop, and reports
//! the median plus mean +- std per loop in nanoseconds. Cells that fail
//! render as `ERR`. Absolute numbers are hardware-specific and
//! informational.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use streamres::ingest::{read_records_from, FileFormat, Record};
use streamres::sampling::{weighted_with_replacement, Reservoir};

use crate::config::stage_seed;

/// 10k-record dataset fixture, checked in under fixtures/.
const DATASET_CSV: &str = include_str!("../fixtures/bench_10k.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Dataset,
    Random,
}

impl DataMode {
    fn label(self) -> &'static str {
        match self {
            DataMode::Dataset => "d",
            DataMode::Random => "r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Uniform,
    Weighted,
}

impl Family {
    fn label(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub ks: Vec<usize>,
    pub data_modes: Vec<DataMode>,
    pub replacement: Vec<bool>,
    pub families: Vec<Family>,
    pub repeats: usize,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            ks: vec![100, 4500, 9000],
            data_modes: vec![DataMode::Dataset, DataMode::Random],
            replacement: vec![true, false],
            families: vec![Family::Uniform, Family::Weighted],
            repeats: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellStats {
    pub median_ns: f64,
    pub mean_ns: f64,
    pub std_ns: f64,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub k: usize,
    pub data: DataMode,
    pub replacement: bool,
    pub family: Family,
    pub outcome: Result<CellStats, String>,
}

/// Parses the checked-in dataset fixture.
pub fn dataset_records() -> Result<Vec<Record>> {
    let reader = read_records_from(DATASET_CSV.as_bytes(), FileFormat::Csv)?;
    let mut records = Vec::new();
    for r in reader {
        records.push(r?);
    }
    Ok(records)
}

fn random_records(n: usize, rng: &mut ChaCha8Rng) -> Vec<Record> {
    (0..n)
        .map(|i| Record {
            stream_id: "r".to_string(),
            timestamp: i as u64,
            features: vec![rng.random::<f64>(), rng.random::<f64>()],
            weight: rng.random::<f64>() + 1e-6,
            label: None,
        })
        .collect()
}

fn time_cell(
    records: &[Record],
    k: usize,
    family: Family,
    replacement: bool,
    repeats: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CellStats, String> {
    let one_loop = |rng: &mut ChaCha8Rng| -> Result<(), String> {
        match (family, replacement) {
            (Family::Uniform, true) => {
                let mut picks = Vec::with_capacity(k);
                for _ in 0..k {
                    picks.push(rng.random_range(0..records.len()));
                }
                std::hint::black_box(picks);
            }
            (Family::Uniform, false) => {
                let mut res = Reservoir::new(k);
                for r in records {
                    res.insert_uniform(r.clone(), rng);
                }
                std::hint::black_box(res.len());
            }
            (Family::Weighted, true) => {
                let picks =
                    weighted_with_replacement(records, k, rng).map_err(|e| e.to_string())?;
                std::hint::black_box(picks.len());
            }
            (Family::Weighted, false) => {
                let mut res = Reservoir::new(k);
                for r in records {
                    res.insert_weighted(r.clone(), rng)
                        .map_err(|e| e.to_string())?;
                }
                std::hint::black_box(res.len());
            }
        }
        Ok(())
    };

    if records.is_empty() || k > records.len() {
        return Err(format!("k={k} over {} records", records.len()));
    }
    // Warm-up loop, excluded from the statistics.
    one_loop(rng)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        one_loop(rng)?;
        times.push(start.elapsed().as_nanos() as f64);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ns = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let mean_ns = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean_ns) * (t - mean_ns)).sum::<f64>()
        / times.len() as f64;
    Ok(CellStats {
        median_ns,
        mean_ns,
        std_ns: var.sqrt(),
    })
}

/// Runs every grid cell; row order is ks x data_modes x replacement x
/// families.
pub fn run_grid(grid: &BenchGrid, seed: u64) -> Result<Vec<BenchRow>> {
    let dataset = dataset_records()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "bench"));
    let mut rows = Vec::new();
    for &k in &grid.ks {
        for &data in &grid.data_modes {
            let records: Vec<Record> = match data {
                DataMode::Dataset => dataset.clone(),
                DataMode::Random => random_records(dataset.len(), &mut rng),
            };
            for &replacement in &grid.replacement {
                for &family in &grid.families {
                    let outcome =
                        time_cell(&records, k, family, replacement, grid.repeats, &mut rng);
                    rows.push(BenchRow {
                        k,
                        data,
                        replacement,
                        family,
                        outcome,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("k,data,replacement,family,median_ns,mean_ns,std_ns\n");
    for r in rows {
        match &r.outcome {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:.0},{:.0},{:.0}",
                    r.k,
                    r.data.label(),
                    if r.replacement { "yes" } else { "no" },
                    r.family.label(),
                    s.median_ns,
                    s.mean_ns,
                    s.std_ns
                );
            }
            Err(_) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},ERR,ERR,ERR",
                    r.k,
                    r.data.label(),
                    if r.replacement { "yes" } else { "no" },
                    r.family.label()
                );
            }
        }
    }
    out
}

fn human_ns(ns: f64) -> String {
    if ns >= 1e9 {
        format!("{:.2} s", ns / 1e9)
    } else if ns >= 1e6 {
        format!("{:.2} ms", ns / 1e6)
    } else if ns >= 1e3 {
        format!("{:.2} us", ns / 1e3)
    } else {
        format!("{ns:.0} ns")
    }
}

pub fn render_text(rows: &[BenchRow]) -> String {
    let mut table = vec![[
        "K".to_string(),
        "Data (d/r)".to_string(),
        "Replacement".to_string(),
        "Family".to_string(),
        "Time".to_string(),
        "Mean +- std per loop".to_string(),
    ]];
    for r in rows {
        let (time, spread) = match &r.outcome {
            Ok(s) => (
                human_ns(s.median_ns),
                format!("{} +- {}", human_ns(s.mean_ns), human_ns(s.std_ns)),
            ),
            Err(_) => ("ERR".to_string(), "ERR".to_string()),
        };
        table.push([
            r.k.to_string(),
            r.data.label().to_string(),
            if r.replacement { "yes" } else { "no" }.to_string(),
            r.family.label().to_string(),
            time,
            spread,
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let sep: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&sep.join("-+-"));
            out.push('\n');
        }
    }
    out
}
