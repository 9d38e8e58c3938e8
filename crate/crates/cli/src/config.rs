//! Pipeline configuration: JSON file, dotted-path overrides, seed
//! derivation. The schema is documented in docs/config.md.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use streamres::events::OutlierRule;
use streamres::ingest::{FileFormat, SyntheticSpec, WeightLaw};
use streamres::multires::AllocationPolicy;
use streamres::resmeans::ClusterConfig;

/// Derives a per-stage seed from the pipeline seed: FNV-1a of the stage tag
/// mixed into the seed through splitmix64. Stable across runs and platforms.
pub fn stage_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SourceConfig {
    File {
        path: PathBuf,
        format: FileFormat,
    },
    Synthetic {
        count: u64,
        n_clusters: usize,
        means: Vec<Vec<f64>>,
        #[serde(default = "default_stddev")]
        stddev: f64,
        #[serde(default)]
        anomaly_rate: f64,
        #[serde(default = "default_offset")]
        anomaly_offset: f64,
        #[serde(default = "default_law")]
        weight_law: WeightLaw,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_stddev() -> f64 {
    1.0
}
fn default_offset() -> f64 {
    10.0
}
fn default_law() -> WeightLaw {
    WeightLaw::Constant
}

/// Clustering section; omitted seed and timeout derive from the pipeline
/// seed and "no timeout" respectively.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_window_size")]
    pub window_size: usize,
    #[serde(default)]
    pub window_timeout: Option<u64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_k() -> usize {
    3
}
fn default_q() -> f64 {
    2.0
}
fn default_window_size() -> usize {
    256
}
fn default_max_iterations() -> usize {
    100
}
fn default_epsilon() -> f64 {
    1e-6
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: default_k(),
            q: default_q(),
            window_size: default_window_size(),
            window_timeout: None,
            max_iterations: default_max_iterations(),
            epsilon: default_epsilon(),
            seed: None,
        }
    }
}

impl ClusterSection {
    pub fn to_cluster_config(&self, pipeline_seed: u64) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            q: self.q,
            window_size: self.window_size,
            window_timeout: self.window_timeout.unwrap_or(u64::MAX),
            max_iterations: self.max_iterations,
            epsilon: self.epsilon,
            seed: self.seed.unwrap_or_else(|| stage_seed(pipeline_seed, "cluster")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub source: SourceConfig,
    #[serde(default)]
    pub policy: AllocationPolicy,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub rule: OutlierRule,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        for pair in overrides {
            apply_override(&mut value, pair)?;
        }
        let config: PipelineConfig =
            serde_json::from_value(value).context("config schema mismatch")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate().map_err(anyhow::Error::from)?;
        self.cluster
            .to_cluster_config(self.seed)
            .validate()
            .map_err(anyhow::Error::from)?;
        if !(self.rule.lambda > 0.0 && self.rule.lambda.is_finite()) {
            bail!("rule.lambda must be positive and finite");
        }
        if let SourceConfig::Synthetic { .. } = &self.source {
            self.synthetic_spec()?;
        }
        Ok(())
    }

    /// The generator spec implied by a synthetic source.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        match &self.source {
            SourceConfig::Synthetic {
                n_clusters,
                means,
                stddev,
                anomaly_rate,
                anomaly_offset,
                weight_law,
                seed,
                ..
            } => Ok(SyntheticSpec {
                n_clusters: *n_clusters,
                means: means.clone(),
                stddev: *stddev,
                anomaly_rate: *anomaly_rate,
                anomaly_offset: *anomaly_offset,
                weight_law: weight_law.clone(),
                seed: seed.unwrap_or_else(|| stage_seed(self.seed, "ingest")),
            }),
            SourceConfig::File { .. } => bail!("source is a file, not a synthetic spec"),
        }
    }
}

/// Applies one `--set dotted.path=value` override onto the raw JSON config.
/// The value is parsed as JSON when possible and falls back to a string.
fn apply_override(root: &mut serde_json::Value, pair: &str) -> Result<()> {
    let Some((path, raw_value)) = pair.split_once('=') else {
        bail!("override {pair:?} must look like key.path=value");
    };
    let value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !node.is_object() {
            bail!("override path {path:?} crosses a non-object at {segment:?}");
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}
