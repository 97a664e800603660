//! Model, cluster and parallelism descriptions plus the built-in preset
//! catalog and the scenario file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Llama,
    Gpt,
    PhiMoe,
}

impl ModelFamily {
    pub fn is_moe(self) -> bool {
        self == ModelFamily::PhiMoe
    }

    fn default_vocab(self) -> usize {
        match self {
            ModelFamily::Llama => 128_256,
            ModelFamily::Gpt => 50_257,
            ModelFamily::PhiMoe => 32_064,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub family: ModelFamily,
    pub hidden: usize,
    pub intermediate: usize,
    pub layers: usize,
    pub seq_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    /// Width of the key/value projections; equals `hidden` without grouped-query attention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.intermediate == 0 || self.layers == 0 || self.seq_len == 0 {
            return Err(Error::config(format!("model `{}` has a zero dimension", self.name)));
        }
        if self.family.is_moe() {
            match (self.experts, self.topk) {
                (Some(e), Some(k)) if e > 0 && k > 0 && k <= e => {}
                _ => {
                    return Err(Error::config(format!(
                        "MoE model `{}` needs experts >= topk >= 1",
                        self.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn kv_width(&self) -> usize {
        self.kv_hidden.unwrap_or(self.hidden)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.unwrap_or_else(|| self.family.default_vocab())
    }

    /// Number of weight matrices of width `intermediate` in one MLP (or one expert).
    pub fn mlp_matrices(&self) -> usize {
        match self.family {
            ModelFamily::Gpt => 2,
            ModelFamily::Llama | ModelFamily::PhiMoe => 3,
        }
    }

    pub fn attention_params(&self) -> f64 {
        let h = self.hidden as f64;
        let kv = self.kv_width() as f64;
        2.0 * h * h + 2.0 * h * kv
    }

    pub fn mlp_params(&self) -> f64 {
        let per_expert = self.mlp_matrices() as f64 * self.hidden as f64 * self.intermediate as f64;
        match self.experts {
            Some(e) if self.family.is_moe() => per_expert * e as f64 + (self.hidden * e) as f64,
            _ => per_expert,
        }
    }

    pub fn params_per_layer(&self) -> f64 {
        self.attention_params() + self.mlp_params()
    }

    /// Input embedding plus untied output projection.
    pub fn embedding_params(&self) -> f64 {
        2.0 * self.vocab_size() as f64 * self.hidden as f64
    }

    pub fn param_count(&self) -> f64 {
        self.params_per_layer() * self.layers as f64 + self.embedding_params()
    }

    pub fn with_layers(&self, layers: usize) -> ModelSpec {
        ModelSpec {
            layers,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default)]
    pub name: String,
    pub gpus: usize,
    pub per_node: usize,
    /// Dense half-precision peak per GPU.
    pub peak_tflops: f64,
    /// Intra-node GPU-to-GPU bandwidth per GPU.
    pub local_bw_gbs: f64,
    /// Inter-node bandwidth available to one GPU.
    pub cross_bw_gbs: f64,
    pub mem_gb: f64,
    /// Device memory bandwidth, used for memory-bound operators.
    #[serde(default = "default_hbm")]
    pub hbm_gbs: f64,
}

fn default_hbm() -> f64 {
    1000.0
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.peak_tflops, self.local_bw_gbs, self.cross_bw_gbs, self.mem_gb, self.hbm_gbs];
        if self.gpus == 0 || self.per_node == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config(format!("cluster `{}` has a non-positive field", self.name)));
        }
        if !self.gpus.is_multiple_of(self.per_node) {
            return Err(Error::config(format!(
                "cluster `{}`: {} GPUs not divisible by {} per node",
                self.name, self.gpus, self.per_node
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.gpus / self.per_node
    }

    pub fn mem_bytes(&self) -> f64 {
        self.mem_gb * 1e9
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismSpec {
    #[serde(default = "one")]
    pub dp: usize,
    #[serde(default = "one")]
    pub tp: usize,
    #[serde(default = "one")]
    pub pp: usize,
    #[serde(default = "one")]
    pub cp: usize,
    #[serde(default = "one")]
    pub ep: usize,
    /// Sequence parallelism; only meaningful with `tp > 1`. Defaults to on.
    #[serde(default = "yes")]
    pub sp: bool,
}

fn yes() -> bool {
    true
}

impl Default for ParallelismSpec {
    fn default() -> Self {
        ParallelismSpec {
            dp: 1,
            tp: 1,
            pp: 1,
            cp: 1,
            ep: 1,
            sp: true,
        }
    }
}

impl ParallelismSpec {
    pub fn new(dp: usize, tp: usize, pp: usize, cp: usize, ep: usize) -> Self {
        ParallelismSpec {
            dp,
            tp,
            pp,
            cp,
            ep,
            sp: true,
        }
    }

    pub fn world_size(&self) -> usize {
        self.dp * self.tp * self.pp * self.cp
    }

    pub fn validate(&self) -> Result<()> {
        if [self.dp, self.tp, self.pp, self.cp, self.ep].contains(&0) {
            return Err(Error::config("parallelism group sizes must be >= 1"));
        }
        if !self.dp.is_multiple_of(self.ep) {
            return Err(Error::config(format!(
                "expert-parallel size {} must divide data-parallel size {}",
                self.ep, self.dp
            )));
        }
        Ok(())
    }

    pub fn validate_for(&self, cluster: &ClusterSpec) -> Result<()> {
        self.validate()?;
        if self.world_size() != cluster.gpus {
            return Err(Error::config(format!(
                "dp*tp*pp*cp = {} but cluster `{}` has {} GPUs",
                self.world_size(),
                cluster.name,
                cluster.gpus
            )));
        }
        Ok(())
    }

    /// Tensor-parallel collectives leave the node.
    pub fn tp_cross_node(&self, per_node: usize) -> bool {
        self.tp > per_node
    }

    /// Context-parallel peers sit in different nodes (rank order tp, cp, dp, pp).
    pub fn cp_cross_node(&self, per_node: usize) -> bool {
        self.tp * self.cp > per_node
    }

    pub fn ep_cross_node(&self, per_node: usize) -> bool {
        self.tp * self.cp * self.ep > per_node
    }

    pub fn dp_cross_node(&self, per_node: usize) -> bool {
        self.tp * self.cp * self.dp > per_node
    }

    pub fn pp_cross_node(&self, per_node: usize) -> bool {
        self.tp * self.cp * self.dp >= per_node
    }
}

fn llama(name: &str, hidden: usize, intermediate: usize, layers: usize, seq_len: usize) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        family: ModelFamily::Llama,
        hidden,
        intermediate,
        layers,
        seq_len,
        experts: None,
        topk: None,
        kv_hidden: Some(1024),
        vocab: None,
    }
}

fn gpt(name: &str, hidden: usize, intermediate: usize, layers: usize, seq_len: usize) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        family: ModelFamily::Gpt,
        hidden,
        intermediate,
        layers,
        seq_len,
        experts: None,
        topk: None,
        kv_hidden: None,
        vocab: None,
    }
}

fn phi(name: &str, layers: usize) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        family: ModelFamily::PhiMoe,
        hidden: 4096,
        intermediate: 6400,
        layers,
        seq_len: 3072,
        experts: Some(16),
        topk: Some(2),
        kv_hidden: Some(1024),
        vocab: None,
    }
}

/// Evaluation model settings. Sequence length is the first listed value;
/// override `seq_len` in a scenario for the long-sequence variants.
pub fn model_presets() -> BTreeMap<String, ModelSpec> {
    [
        llama("llama-8B", 4096, 14336, 32, 8192),
        llama("llama-25B", 8192, 28672, 28, 8192),
        llama("llama-39B", 16384, 53248, 12, 8192),
        llama("llama-66B", 8192, 28672, 76, 16384),
        gpt("gpt-6.7B", 4096, 16384, 32, 8192),
        gpt("gpt-18B", 6144, 24576, 40, 8192),
        gpt("gpt-30B", 12288, 49152, 16, 8192),
        phi("phi-16B", 12),
        phi("phi-31B", 24),
        phi("phi-42B", 32),
    ]
    .into_iter()
    .map(|m| (m.name.clone(), m))
    .collect()
}

fn cluster(
    name: &str,
    nodes: usize,
    peak_tflops: f64,
    local_bw_gbs: f64,
    nic_gbs_per_node: f64,
    mem_gb: f64,
    hbm_gbs: f64,
) -> ClusterSpec {
    ClusterSpec {
        name: name.into(),
        gpus: nodes * 8,
        per_node: 8,
        peak_tflops,
        local_bw_gbs,
        cross_bw_gbs: nic_gbs_per_node / 8.0,
        mem_gb,
        hbm_gbs,
    }
}

/// Testbed clusters. Cross-node bandwidth is the node's aggregate NIC
/// bandwidth split evenly across its eight GPUs.
pub fn cluster_presets() -> BTreeMap<String, ClusterSpec> {
    [
        // 100 Gbps InfiniBand, PCIe 4.0 at 32 GB/s
        cluster("a40", 8, 149.7, 32.0, 12.5, 48.0, 696.0),
        // 4x200 Gbps InfiniBand, NVLink 400 GB/s
        cluster("a800", 8, 312.0, 400.0, 100.0, 80.0, 2039.0),
        // single node, NVLink 600 GB/s
        cluster("a100", 1, 312.0, 600.0, 25.0, 80.0, 2039.0),
        // 8x400 Gbps InfiniBand, NVLink 900 GB/s
        cluster("h100", 4, 989.0, 900.0, 400.0, 80.0, 3350.0),
    ]
    .into_iter()
    .map(|c| (c.name.clone(), c))
    .collect()
}

pub fn model_preset(name: &str) -> Result<ModelSpec> {
    model_presets()
        .remove(name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn cluster_preset(name: &str) -> Result<ClusterSpec> {
    cluster_presets()
        .remove(name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetCatalog {
    pub models: BTreeMap<String, ModelSpec>,
    pub clusters: BTreeMap<String, ClusterSpec>,
    pub archetypes: Vec<String>,
}

pub fn list_presets() -> PresetCatalog {
    PresetCatalog {
        models: model_presets(),
        clusters: cluster_presets(),
        archetypes: crate::profile::Archetype::ALL
            .iter()
            .map(|a| a.name().to_string())
            .collect(),
    }
}

/// A preset referenced by name or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetOr<T> {
    Named(String),
    Inline(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ProfileSource {
    Archetype(String),
    Path(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchCaps {
    pub sequences: usize,
    pub segments: usize,
    pub candidates: usize,
}

impl Default for SearchCaps {
    fn default() -> Self {
        SearchCaps {
            sequences: 16,
            segments: 6,
            candidates: 4096,
        }
    }
}

impl SearchCaps {
    /// Parses `seq=16,segs=6,cands=4096`; omitted keys keep their defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut caps = SearchCaps::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed cap `{part}`")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("cap `{key}` is not a positive integer")))?;
            if value == 0 {
                return Err(Error::config(format!("cap `{key}` must be >= 1")));
            }
            match key.trim() {
                "seq" | "sequences" => caps.sequences = value,
                "segs" | "segments" => caps.segments = value,
                "cands" | "candidates" => caps.candidates = value,
                other => return Err(Error::config(format!("unknown cap `{other}`"))),
            }
        }
        Ok(caps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    /// Effective over nominal link bandwidth.
    pub bw_efficiency: f64,
    /// Share of tensor-parallel communication hidden by the intra-batch baseline.
    pub intra_batch_hidden_frac: f64,
    /// Synchronization cost added to every step of a pairing plan.
    pub barrier_us: f64,
    /// Pipeline send/recv latency between devices.
    pub pp_latency_us: f64,
    pub parallel_search: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            bw_efficiency: 0.5,
            intra_batch_hidden_frac: 0.261,
            barrier_us: 0.0,
            pp_latency_us: 0.0,
            parallel_search: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryOptions {
    /// Per-GPU capacity override; the cluster's `mem_gb` when absent.
    pub capacity_gb: Option<f64>,
    pub slack_mb: f64,
    /// Parameters, gradients and optimizer states per parameter.
    pub state_bytes_per_param: f64,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        MemoryOptions {
            capacity_gb: None,
            slack_mb: 512.0,
            state_bytes_per_param: 16.0,
        }
    }
}

fn default_microbatches() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub model: PresetOr<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    pub cluster: PresetOr<ClusterSpec>,
    pub parallelism: ParallelismSpec,
    #[serde(default = "one")]
    pub micro_batch_size: usize,
    #[serde(default = "default_microbatches")]
    pub microbatches: usize,
    pub profile: ProfileSource,
    #[serde(default)]
    pub caps: SearchCaps,
    #[serde(default)]
    pub options: EstimateOptions,
    #[serde(default)]
    pub memory: MemoryOptions,
    #[serde(default)]
    pub seed: u64,
}

/// A scenario with presets resolved and every cross-field invariant checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub cluster: ClusterSpec,
    pub parallelism: ParallelismSpec,
    pub micro_batch_size: usize,
    pub microbatches: usize,
    pub profile: ProfileSource,
    pub caps: SearchCaps,
    pub options: EstimateOptions,
    pub memory: MemoryOptions,
    pub seed: u64,
}

impl ScenarioFile {
    pub fn resolve(self) -> Result<Scenario> {
        let mut model = match self.model {
            PresetOr::Named(n) => model_preset(&n)?,
            PresetOr::Inline(m) => m,
        };
        if let Some(seq) = self.seq_len {
            model.seq_len = seq;
        }
        let cluster = match self.cluster {
            PresetOr::Named(n) => cluster_preset(&n)?,
            PresetOr::Inline(c) => c,
        };
        let scenario = Scenario {
            name: self.name,
            model,
            cluster,
            parallelism: self.parallelism,
            micro_batch_size: self.micro_batch_size,
            microbatches: self.microbatches,
            profile: self.profile,
            caps: self.caps,
            options: self.options,
            memory: self.memory,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.cluster.validate()?;
        self.parallelism.validate_for(&self.cluster)?;
        if self.parallelism.ep > 1 && !self.model.family.is_moe() {
            return Err(Error::config(format!(
                "expert parallelism requested for dense model `{}`",
                self.model.name
            )));
        }
        if self.micro_batch_size == 0 || self.microbatches == 0 {
            return Err(Error::config("micro-batch size and count must be >= 1"));
        }
        if self.caps.sequences == 0 || self.caps.segments == 0 || self.caps.candidates == 0 {
            return Err(Error::config("search caps must be >= 1"));
        }
        let o = &self.options;
        if !(o.bw_efficiency > 0.0 && o.bw_efficiency <= 1.0) {
            return Err(Error::config("bw_efficiency must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&o.intra_batch_hidden_frac) {
            return Err(Error::config("intra_batch_hidden_frac must be in [0, 1]"));
        }
        if o.barrier_us < 0.0 || o.pp_latency_us < 0.0 {
            return Err(Error::config("latencies must be non-negative"));
        }
        Ok(())
    }

    pub fn capacity_bytes(&self) -> f64 {
        self.memory.capacity_gb.unwrap_or(self.cluster.mem_gb) * 1e9
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::schema(origin, &e))?;
    file.resolve()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, &path.display().to_string())
}
