//! Analytic operator costs used when a profile has no measured solo time.
//!
//! Compute operators cost `flops / peak + bytes / memory bandwidth`;
//! communication operators cost `wire bytes / (nominal bandwidth * efficiency)`.
//! All sizes assume bf16 activations.

use serde::{Deserialize, Serialize};

use crate::config::{ClusterSpec, ModelFamily, ModelSpec, ParallelismSpec};
use crate::ops::{Lane, OperatorClass, Pass};

const BF16: f64 = 2.0;
const FA_BWD_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub peak_tflops: f64,
    pub hbm_gbs: f64,
    pub local_bw_gbs: f64,
    pub cross_bw_gbs: f64,
    pub bw_efficiency: f64,
    pub per_node: usize,
}

impl Hardware {
    pub fn from_cluster(cluster: &ClusterSpec, bw_efficiency: f64) -> Self {
        Hardware {
            peak_tflops: cluster.peak_tflops,
            hbm_gbs: cluster.hbm_gbs,
            local_bw_gbs: cluster.local_bw_gbs,
            cross_bw_gbs: cluster.cross_bw_gbs,
            bw_efficiency,
            per_node: cluster.per_node,
        }
    }

    pub fn bandwidth_gbs(&self, lane: Lane) -> f64 {
        match lane {
            Lane::CrossComm => self.cross_bw_gbs * self.bw_efficiency,
            _ => self.local_bw_gbs * self.bw_efficiency,
        }
    }
}

/// Work of one operator instance on one device.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OpWork {
    pub flops: f64,
    /// Device-memory traffic of memory-bound compute operators.
    pub mem_bytes: f64,
    /// Payload of a communication operator.
    pub payload_bytes: f64,
    /// Bytes each device actually sends for the collective.
    pub wire_bytes: f64,
}

impl OpWork {
    pub fn duration_us(&self, lane: Lane, hw: &Hardware) -> f64 {
        match lane {
            Lane::Compute => {
                self.flops / (hw.peak_tflops * 1e12) * 1e6 + self.mem_bytes / (hw.hbm_gbs * 1e9) * 1e6
            }
            _ => self.wire_bytes / (hw.bandwidth_gbs(lane) * 1e9) * 1e6,
        }
    }
}

/// Per-layer operator sizing for a model under a parallel layout.
#[derive(Debug, Clone)]
pub struct LayerShape {
    pub family: ModelFamily,
    /// Tokens per device after context-parallel split.
    pub tokens: f64,
    /// Sequence length seen by attention (keys per query).
    pub context: f64,
    pub hidden: f64,
    pub kv: f64,
    pub inter: f64,
    pub experts: f64,
    pub topk: f64,
    pub tp: f64,
    pub cp: f64,
    pub ep: f64,
}

impl LayerShape {
    pub fn new(model: &ModelSpec, par: &ParallelismSpec, micro_batch_size: usize) -> Self {
        LayerShape {
            family: model.family,
            tokens: (model.seq_len * micro_batch_size) as f64 / par.cp as f64,
            context: model.seq_len as f64,
            hidden: model.hidden as f64,
            kv: model.kv_width() as f64,
            inter: model.intermediate as f64,
            experts: model.experts.unwrap_or(1) as f64,
            topk: model.topk.unwrap_or(1) as f64,
            tp: par.tp as f64,
            cp: par.cp as f64,
            ep: par.ep as f64,
        }
    }

    fn gemm_flops(&self, shape: &str) -> f64 {
        let (t, h, i, tp) = (self.tokens, self.hidden, self.inter, self.tp);
        // GPT's two-matrix MLP is split across the `gate`/`up` nodes as halves of fc1
        let up_width = if self.family == ModelFamily::Gpt { i / 2.0 } else { i };
        match shape {
            "qkv" => 2.0 * t * h * (h + 2.0 * self.kv) / tp,
            "proj" => 2.0 * t * h * h / tp,
            "gate" | "up" => 2.0 * t * h * up_width / tp,
            "gate_up" => 2.0 * 2.0 * t * h * up_width / tp,
            "down" => 2.0 * t * i * h / tp,
            "experts" => {
                let mats = if self.family == ModelFamily::Gpt { 2.0 } else { 3.0 };
                mats * 2.0 * t * self.topk * h * i / tp
            }
            _ => 0.0,
        }
    }

    /// Work for operator `class` with template shape key `shape` in `pass`.
    pub fn work(&self, class: OperatorClass, shape: &str, pass: Pass) -> OpWork {
        let (t, h, tp) = (self.tokens, self.hidden, self.tp);
        let sharded_tokens = t / tp;
        let mut w = OpWork::default();
        match class {
            OperatorClass::Gemm | OperatorClass::WeightGrad | OperatorClass::GroupGemm => {
                w.flops = self.gemm_flops(shape);
            }
            OperatorClass::FlashAttention => w.flops = 2.0 * t * self.context * h / tp,
            OperatorClass::FlashAttentionBwd => {
                w.flops = FA_BWD_FACTOR * 2.0 * t * self.context * h / tp
            }
            OperatorClass::LayerNorm => w.mem_bytes = 2.0 * sharded_tokens * h * BF16,
            OperatorClass::FusedBda => w.mem_bytes = 4.0 * sharded_tokens * h * BF16,
            OperatorClass::Router => w.flops = 2.0 * sharded_tokens * h * self.experts,
            OperatorClass::Permute => w.mem_bytes = 2.0 * sharded_tokens * self.topk * h * BF16,
            OperatorClass::AllGather | OperatorClass::ReduceScatter => {
                w.payload_bytes = t * h * BF16;
                w.wire_bytes = w.payload_bytes * (tp - 1.0) / tp;
            }
            OperatorClass::SendRecv => {
                let kv_chunk = 2.0 * t * self.kv * BF16 / tp;
                let per_pass = if pass == Pass::Backward { 2.0 } else { 1.0 };
                w.payload_bytes = per_pass * (self.cp - 1.0) * kv_chunk;
                w.wire_bytes = w.payload_bytes;
            }
            OperatorClass::AllToAll => {
                w.payload_bytes = t * self.topk * h * BF16 / tp;
                w.wire_bytes = w.payload_bytes * (self.ep - 1.0) / self.ep;
            }
        }
        w
    }
}

/// Lane of a communication class under the rank order tp, cp, dp/ep, pp.
pub fn resolve_lane(class: OperatorClass, par: &ParallelismSpec, per_node: usize) -> Lane {
    let cross = match class {
        OperatorClass::AllGather | OperatorClass::ReduceScatter => par.tp_cross_node(per_node),
        OperatorClass::SendRecv => par.cp_cross_node(per_node),
        OperatorClass::AllToAll => par.ep_cross_node(per_node),
        _ => return Lane::Compute,
    };
    if cross {
        Lane::CrossComm
    } else {
        Lane::LocalComm
    }
}
