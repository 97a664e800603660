//! Analytic per-iteration communication volume of one device, split by
//! whether each collective stays inside a node.
//!
//! Counted per micro-batch and hosted layer: two AllGather and two
//! ReduceScatter per pass for TP with sequence parallelism, the CP key/value
//! ring exchange, two AllToAll per pass for EP. Counted per iteration: the
//! data-parallel gradient all-reduce and the pipeline activation transfers.
//! Wire bytes per device use the ring factor `(g - 1) / g`.

use serde::Serialize;

use crate::config::{ClusterSpec, ModelSpec, ParallelismSpec};
use crate::error::{Error, Result};
use crate::ops::{Lane, OperatorClass, Pass};
use crate::roofline::{resolve_lane, Hardware, LayerShape};

const BF16: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveVolume {
    pub name: &'static str,
    pub group: usize,
    pub cross_node: bool,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommVolume {
    pub local_bytes: f64,
    pub cross_bytes: f64,
    pub local_us: f64,
    pub cross_us: f64,
    pub cross_time_ratio: f64,
    pub breakdown: Vec<CollectiveVolume>,
}

/// Share of communication time spent crossing nodes; 0 without any traffic.
pub fn cross_time_ratio(local_us: f64, cross_us: f64) -> f64 {
    let total = local_us + cross_us;
    if total > 0.0 {
        cross_us / total
    } else {
        0.0
    }
}

pub fn comm_volume_estimate(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    par: &ParallelismSpec,
    micro_batch_size: usize,
    microbatches: usize,
    bw_efficiency: f64,
) -> Result<CommVolume> {
    model.validate()?;
    par.validate_for(cluster)?;
    if par.ep > 1 && !model.family.is_moe() {
        return Err(Error::config("expert parallelism requested for a dense model"));
    }
    let hw = Hardware::from_cluster(cluster, bw_efficiency);
    let shape = LayerShape::new(model, par, micro_batch_size);
    let per_node = cluster.per_node;
    let layers_here = model.layers as f64 / par.pp as f64;
    let per_layer = layers_here * microbatches as f64;
    let mut breakdown = Vec::new();

    let per_pass = |class: OperatorClass, count: f64| -> f64 {
        [Pass::Forward, Pass::Backward]
            .iter()
            .map(|&pass| count * shape.work(class, "", pass).wire_bytes)
            .sum()
    };
    if par.tp > 1 {
        let cross = resolve_lane(OperatorClass::AllGather, par, per_node) == Lane::CrossComm;
        breakdown.push(CollectiveVolume {
            name: "tp_allgather",
            group: par.tp,
            cross_node: cross,
            bytes: per_layer * per_pass(OperatorClass::AllGather, 2.0),
        });
        breakdown.push(CollectiveVolume {
            name: "tp_reducescatter",
            group: par.tp,
            cross_node: cross,
            bytes: per_layer * per_pass(OperatorClass::ReduceScatter, 2.0),
        });
    }
    if par.cp > 1 {
        breakdown.push(CollectiveVolume {
            name: "cp_sendrecv",
            group: par.cp,
            cross_node: resolve_lane(OperatorClass::SendRecv, par, per_node) == Lane::CrossComm,
            bytes: per_layer * per_pass(OperatorClass::SendRecv, 1.0),
        });
    }
    if par.ep > 1 {
        breakdown.push(CollectiveVolume {
            name: "ep_alltoall",
            group: par.ep,
            cross_node: resolve_lane(OperatorClass::AllToAll, par, per_node) == Lane::CrossComm,
            bytes: per_layer * per_pass(OperatorClass::AllToAll, 2.0),
        });
    }
    if par.dp > 1 {
        // ring all-reduce of bf16 gradients moves 2 (g-1)/g of the buffer;
        // expert weights reduce over the DP ranks sharing an expert
        let g = par.dp as f64;
        let tp = par.tp as f64;
        let dense = (model.attention_params() / tp) * layers_here + model.embedding_params() / (tp * par.pp as f64);
        let mut bytes = 2.0 * (g - 1.0) / g * dense * BF16;
        let experts = model.mlp_params() / tp * layers_here;
        if model.family.is_moe() {
            let ge = g / par.ep as f64;
            if ge > 1.0 {
                bytes += 2.0 * (ge - 1.0) / ge * experts / par.ep as f64 * BF16;
            }
        } else {
            bytes += 2.0 * (g - 1.0) / g * experts * BF16;
        }
        breakdown.push(CollectiveVolume {
            name: "dp_allreduce",
            group: par.dp,
            cross_node: par.dp_cross_node(per_node),
            bytes,
        });
    }
    if par.pp > 1 {
        // one activation out and one gradient back per micro-batch, sharded by TP
        let act = shape.tokens * shape.hidden * BF16 / par.tp as f64;
        breakdown.push(CollectiveVolume {
            name: "pp_sendrecv",
            group: par.pp,
            cross_node: par.pp_cross_node(per_node),
            bytes: 2.0 * act * microbatches as f64,
        });
    }

    let (mut local_bytes, mut cross_bytes) = (0.0, 0.0);
    for c in &breakdown {
        if c.cross_node {
            cross_bytes += c.bytes;
        } else {
            local_bytes += c.bytes;
        }
    }
    let us = |bytes: f64, lane: Lane| bytes / (hw.bandwidth_gbs(lane) * 1e9) * 1e6;
    let local_us = us(local_bytes, Lane::LocalComm);
    let cross_us = us(cross_bytes, Lane::CrossComm);
    Ok(CommVolume {
        local_bytes,
        cross_bytes,
        local_us,
        cross_us,
        cross_time_ratio: cross_time_ratio(local_us, cross_us),
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{cluster_preset, model_preset};

    #[test]
    fn ratio_of_time_pairs() {
        assert!((cross_time_ratio(0.3, 0.15) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cross_time_ratio(0.0, 0.0), 0.0);
    }

    #[test]
    fn no_partitioning_no_layer_collectives() {
        let model = model_preset("llama-8B").unwrap();
        let cl = cluster_preset("a40").unwrap();
        let par = ParallelismSpec::new(64, 1, 1, 1, 1);
        let v = comm_volume_estimate(&model, &cl, &par, 1, 4, 0.5).unwrap();
        assert!(v.breakdown.iter().all(|c| c.name == "dp_allreduce"));
    }

    #[test]
    fn tp8_allgather_by_hand() {
        // 32 layers, m = 2, 8192 tokens x 4096 x 2 bytes per op, 7/8 on the
        // wire, two per pass, two passes
        let model = model_preset("llama-8B").unwrap();
        let cl = cluster_preset("a40").unwrap();
        let par = ParallelismSpec::new(8, 8, 1, 1, 1);
        let v = comm_volume_estimate(&model, &cl, &par, 1, 2, 0.5).unwrap();
        let ag = v.breakdown.iter().find(|c| c.name == "tp_allgather").unwrap();
        let payload = 8192.0 * 4096.0 * 2.0;
        assert_eq!(ag.bytes, 32.0 * 2.0 * 4.0 * payload * 7.0 / 8.0);
        assert!(!ag.cross_node);
    }

    #[test]
    fn dense_model_rejects_ep() {
        let model = model_preset("llama-8B").unwrap();
        let cl = cluster_preset("a40").unwrap();
        let par = ParallelismSpec::new(8, 8, 1, 1, 2);
        assert!(comm_volume_estimate(&model, &cl, &par, 1, 2, 0.5).is_err());
    }
}
