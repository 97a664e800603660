//! Operator vertices and per-layer dependency graphs.
//!
//! A [`LayerDag`] describes the operators of one transformer layer for one
//! pass. Each operator runs on one of three lanes (compute, node-local
//! communication, cross-node communication); the lanes are what the overlap
//! cost model uses to decide which operators may run concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperatorClass {
    #[serde(rename = "GEMM")]
    Gemm,
    FlashAttention,
    FlashAttentionBwd,
    #[serde(rename = "GroupGEMM")]
    GroupGemm,
    #[serde(rename = "FusedBDA")]
    FusedBda,
    LayerNorm,
    Router,
    Permute,
    WeightGrad,
    AllGather,
    ReduceScatter,
    AllToAll,
    SendRecv,
}

impl OperatorClass {
    pub const ALL: [OperatorClass; 13] = [
        OperatorClass::Gemm,
        OperatorClass::FlashAttention,
        OperatorClass::FlashAttentionBwd,
        OperatorClass::GroupGemm,
        OperatorClass::FusedBda,
        OperatorClass::LayerNorm,
        OperatorClass::Router,
        OperatorClass::Permute,
        OperatorClass::WeightGrad,
        OperatorClass::AllGather,
        OperatorClass::ReduceScatter,
        OperatorClass::AllToAll,
        OperatorClass::SendRecv,
    ];

    /// Lane this class runs on unless a node overrides it.
    pub fn default_lane(self) -> Lane {
        match self {
            OperatorClass::AllGather | OperatorClass::ReduceScatter => Lane::LocalComm,
            OperatorClass::AllToAll | OperatorClass::SendRecv => Lane::CrossComm,
            _ => Lane::Compute,
        }
    }

    pub fn is_communication(self) -> bool {
        self.default_lane() != Lane::Compute
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorClass::Gemm => "GEMM",
            OperatorClass::FlashAttention => "FlashAttention",
            OperatorClass::FlashAttentionBwd => "FlashAttentionBwd",
            OperatorClass::GroupGemm => "GroupGEMM",
            OperatorClass::FusedBda => "FusedBDA",
            OperatorClass::LayerNorm => "LayerNorm",
            OperatorClass::Router => "Router",
            OperatorClass::Permute => "Permute",
            OperatorClass::WeightGrad => "WeightGrad",
            OperatorClass::AllGather => "AllGather",
            OperatorClass::ReduceScatter => "ReduceScatter",
            OperatorClass::AllToAll => "AllToAll",
            OperatorClass::SendRecv => "SendRecv",
        }
    }
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Compute,
    LocalComm,
    CrossComm,
}

impl Lane {
    pub const ALL: [Lane; 3] = [Lane::Compute, Lane::LocalComm, Lane::CrossComm];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    Backward,
}

pub type OpId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: OpId,
    pub class: OperatorClass,
    pub pass: Pass,
    pub lane: Lane,
    /// Shape key used for solo-time lookups (e.g. `qkv`, `mlp_ag`).
    pub shape: String,
    pub duration_us: f64,
    /// Payload size for communication operators; zero on the compute lane.
    pub bytes: u64,
    /// Floating-point work of compute operators; zero for communication.
    #[serde(default)]
    pub flops: f64,
}

impl OpNode {
    pub fn new(id: OpId, class: OperatorClass, pass: Pass, duration_us: f64) -> Self {
        OpNode {
            id,
            class,
            pass,
            lane: class.default_lane(),
            shape: String::new(),
            duration_us,
            bytes: 0,
            flops: 0.0,
        }
    }

    pub fn with_lane(mut self, lane: Lane) -> Self {
        self.lane = lane;
        self
    }

    pub fn is_communication(&self) -> bool {
        self.lane != Lane::Compute
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDag {
    pub pass: Pass,
    pub nodes: Vec<OpNode>,
    pub edges: Vec<(OpId, OpId)>,
}

impl LayerDag {
    /// Builds a graph after checking node ids, edge endpoints, payload
    /// invariants and acyclicity.
    pub fn new(pass: Pass, nodes: Vec<OpNode>, edges: Vec<(OpId, OpId)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.id) {
                return Err(Error::config(format!("duplicate operator id {}", n.id)));
            }
            if !(n.duration_us >= 0.0) || !n.duration_us.is_finite() {
                return Err(Error::config(format!(
                    "operator {} has invalid duration {}",
                    n.id, n.duration_us
                )));
            }
            if n.lane == Lane::Compute && n.bytes != 0 {
                return Err(Error::config(format!(
                    "compute operator {} carries a communication payload",
                    n.id
                )));
            }
        }
        for &(p, c) in &edges {
            if !seen.contains(&p) || !seen.contains(&c) {
                return Err(Error::config(format!("edge ({p}, {c}) references unknown operator")));
            }
        }
        let dag = LayerDag { pass, nodes, edges };
        if !dag.is_acyclic() {
            return Err(Error::Cycle);
        }
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: OpId) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn communication_nodes(&self) -> impl Iterator<Item = &OpNode> {
        self.nodes.iter().filter(|n| n.is_communication())
    }

    pub fn total_duration_us(&self) -> f64 {
        self.nodes.iter().map(|n| n.duration_us).sum()
    }

    /// Resolves an id sequence into node references. Unknown ids yield `None`.
    pub fn resolve(&self, seq: &[OpId]) -> Option<Vec<&OpNode>> {
        let by_id: BTreeMap<OpId, &OpNode> = self.nodes.iter().map(|n| (n.id, n)).collect();
        seq.iter().map(|id| by_id.get(id).copied()).collect()
    }

    /// Sorted ids plus, per position, predecessor count and successor positions.
    fn indexed(&self) -> (Vec<OpId>, Vec<usize>, Vec<Vec<usize>>) {
        let mut ids: Vec<OpId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        let pos: BTreeMap<OpId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut indeg = vec![0usize; ids.len()];
        let mut succ = vec![Vec::new(); ids.len()];
        let mut uniq = BTreeSet::new();
        for &(p, c) in &self.edges {
            if !uniq.insert((p, c)) {
                continue;
            }
            let (pi, ci) = (pos[&p], pos[&c]);
            indeg[ci] += 1;
            succ[pi].push(ci);
        }
        (ids, indeg, succ)
    }

    fn is_acyclic(&self) -> bool {
        let (ids, mut indeg, succ) = self.indexed();
        let mut stack: Vec<usize> = (0..ids.len()).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = stack.pop() {
            visited += 1;
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    stack.push(s);
                }
            }
        }
        visited == ids.len()
    }

    /// Up to `cap` distinct topological orders, emitted in lexicographic order
    /// of operator ids. The first order is always the lexicographically
    /// smallest one.
    pub fn topological_orders(&self, cap: usize) -> Result<Vec<Vec<OpId>>> {
        enumerate_topological_orders(self, cap)
    }

    /// True iff `seq` is a permutation of the graph's operators that respects
    /// every edge.
    pub fn validate_sequence(&self, seq: &[OpId]) -> bool {
        validate_sequence(self, seq)
    }
}

pub fn enumerate_topological_orders(dag: &LayerDag, cap: usize) -> Result<Vec<Vec<OpId>>> {
    if cap == 0 {
        return Err(Error::config("enumeration cap must be at least 1"));
    }
    if !dag.is_acyclic() {
        return Err(Error::Cycle);
    }
    let (ids, mut indeg, succ) = dag.indexed();
    let n = ids.len();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    extend_orders(&ids, &succ, &mut indeg, &mut placed, &mut current, &mut out, cap);
    Ok(out)
}

fn extend_orders(
    ids: &[OpId],
    succ: &[Vec<usize>],
    indeg: &mut [usize],
    placed: &mut [bool],
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<OpId>>,
    cap: usize,
) {
    if out.len() >= cap {
        return;
    }
    if current.len() == ids.len() {
        out.push(current.iter().map(|&i| ids[i]).collect());
        return;
    }
    // positions are sorted by id, so scanning in index order is lexicographic
    for i in 0..ids.len() {
        if placed[i] || indeg[i] != 0 {
            continue;
        }
        placed[i] = true;
        current.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
        }
        extend_orders(ids, succ, indeg, placed, current, out, cap);
        for &s in &succ[i] {
            indeg[s] += 1;
        }
        current.pop();
        placed[i] = false;
        if out.len() >= cap {
            return;
        }
    }
}

pub fn validate_sequence(dag: &LayerDag, seq: &[OpId]) -> bool {
    if seq.len() != dag.nodes.len() {
        return false;
    }
    let mut position = BTreeMap::new();
    for (i, &id) in seq.iter().enumerate() {
        if position.insert(id, i).is_some() {
            return false;
        }
    }
    if dag.nodes.iter().any(|n| !position.contains_key(&n.id)) {
        return false;
    }
    dag.edges.iter().all(|(p, c)| position[p] < position[c])
}
