//! Per-layer operator templates and their instantiation into [`LayerDag`]s.
//!
//! Templates are data: a flat node list (each node tagged with its pass) and
//! producer/consumer edges. Nodes carrying a `when` condition only exist when
//! the matching parallel dimension is larger than one; removing a node
//! reconnects its predecessors to its successors. Two templates ship with
//! the crate, see `templates/` and the README for diagrams:
//!
//! * `dense_tp_sp`: 14 forward / 18 backward operators with tensor and
//!   sequence parallelism, plus one send/recv per pass under context
//!   parallelism.
//! * `moe_ep`: the same attention block followed by a routed expert MLP with
//!   two all-to-all exchanges under expert parallelism.
//!
//! Weight-gradient nodes only depend on the gradient that produces them and
//! have no successors, so they float freely in the backward orderings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelSpec, ParallelismSpec};
use crate::error::{Error, Result};
use crate::ops::{LayerDag, Lane, OpId, OpNode, OperatorClass, Pass};
use crate::profile::SoloTimeTable;
use crate::roofline::{resolve_lane, Hardware, LayerShape};

const DENSE_TEMPLATE: &str = include_str!("../templates/dense_tp_sp.json");
const MOE_TEMPLATE: &str = include_str!("../templates/moe_ep.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Tp,
    Cp,
    Ep,
}

impl Condition {
    fn holds(self, par: &ParallelismSpec) -> bool {
        match self {
            Condition::Tp => par.tp > 1,
            Condition::Cp => par.cp > 1,
            Condition::Ep => par.ep > 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateNode {
    pub id: OpId,
    pub class: OperatorClass,
    pub pass: Pass,
    #[serde(default)]
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<Lane>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagTemplate {
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<TemplateNode>,
    pub edges: Vec<(OpId, OpId)>,
}

/// One pass of an instantiated template before durations are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PassSkeleton {
    pub pass: Pass,
    pub nodes: Vec<TemplateNode>,
    pub edges: Vec<(OpId, OpId)>,
}

impl DagTemplate {
    pub fn dense() -> Self {
        Self::parse(DENSE_TEMPLATE, "dense_tp_sp.json").expect("bundled template is valid")
    }

    pub fn moe() -> Self {
        Self::parse(MOE_TEMPLATE, "moe_ep.json").expect("bundled template is valid")
    }

    pub fn for_model(model: &ModelSpec) -> Self {
        if model.family.is_moe() {
            Self::moe()
        } else {
            Self::dense()
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let t: DagTemplate = serde_json::from_str(text).map_err(|e| Error::schema(origin, &e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self) -> Result<()> {
        let mut pass_of = BTreeMap::new();
        for n in &self.nodes {
            if pass_of.insert(n.id, n.pass).is_some() {
                return Err(Error::config(format!("template `{}`: duplicate id {}", self.name, n.id)));
            }
        }
        for &(p, c) in &self.edges {
            match (pass_of.get(&p), pass_of.get(&c)) {
                (Some(a), Some(b)) if a == b => {}
                (Some(_), Some(_)) => {
                    return Err(Error::config(format!(
                        "template `{}`: edge ({p}, {c}) crosses passes",
                        self.name
                    )))
                }
                _ => {
                    return Err(Error::config(format!(
                        "template `{}`: edge ({p}, {c}) references unknown node",
                        self.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Drops conditional nodes that do not apply, bridges the edges around
    /// them and renumbers each pass densely from zero in template order.
    pub fn instantiate(&self, par: &ParallelismSpec, pass: Pass) -> PassSkeleton {
        let members: Vec<&TemplateNode> = self.nodes.iter().filter(|n| n.pass == pass).collect();
        let ids: BTreeSet<OpId> = members.iter().map(|n| n.id).collect();
        let mut edges: BTreeSet<(OpId, OpId)> = self
            .edges
            .iter()
            .copied()
            .filter(|(p, _)| ids.contains(p))
            .collect();
        let dropped: Vec<OpId> = members
            .iter()
            .filter(|n| n.when.is_some_and(|c| !c.holds(par)))
            .map(|n| n.id)
            .collect();
        for x in &dropped {
            let preds: Vec<OpId> = edges.iter().filter(|e| e.1 == *x).map(|e| e.0).collect();
            let succs: Vec<OpId> = edges.iter().filter(|e| e.0 == *x).map(|e| e.1).collect();
            edges.retain(|e| e.0 != *x && e.1 != *x);
            for &p in &preds {
                for &s in &succs {
                    edges.insert((p, s));
                }
            }
        }
        let kept: Vec<&TemplateNode> = members.into_iter().filter(|n| !dropped.contains(&n.id)).collect();
        let renumber: BTreeMap<OpId, OpId> = kept
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i as OpId))
            .collect();
        let nodes = kept
            .iter()
            .map(|n| TemplateNode {
                id: renumber[&n.id],
                ..(*n).clone()
            })
            .collect();
        let edges = edges
            .into_iter()
            .map(|(p, c)| (renumber[&p], renumber[&c]))
            .collect();
        PassSkeleton { pass, nodes, edges }
    }
}

/// Everything needed to attach durations to template nodes.
#[derive(Debug, Clone)]
pub struct LayerContext<'a> {
    pub micro_batch_size: usize,
    pub hardware: Hardware,
    pub solo: Option<&'a SoloTimeTable>,
    pub template: Option<&'a DagTemplate>,
}

impl<'a> LayerContext<'a> {
    pub fn new(hardware: Hardware) -> Self {
        LayerContext {
            micro_batch_size: 1,
            hardware,
            solo: None,
            template: None,
        }
    }
}

/// Solo-time key: pass tag, template shape, then the dimensions that size it.
pub fn shape_key(pass: Pass, shape: &str, model: &ModelSpec, par: &ParallelismSpec, mbs: usize) -> String {
    let tag = match pass {
        Pass::Forward => 'f',
        Pass::Backward => 'b',
    };
    format!(
        "{tag}:{shape}:h{}i{}s{}b{}:tp{}cp{}ep{}",
        model.hidden, model.intermediate, model.seq_len, mbs, par.tp, par.cp, par.ep
    )
}

/// Forward and backward operator graphs of one layer with durations from
/// the solo table when present, the analytic estimator otherwise.
pub fn build_layer_dag(
    model: &ModelSpec,
    par: &ParallelismSpec,
    ctx: &LayerContext<'_>,
) -> Result<(LayerDag, LayerDag)> {
    model.validate()?;
    par.validate()?;
    if par.ep > 1 && !model.family.is_moe() {
        return Err(Error::config(format!(
            "expert parallelism requested for dense model `{}`",
            model.name
        )));
    }
    let owned;
    let template = match ctx.template {
        Some(t) => t,
        None => {
            owned = DagTemplate::for_model(model);
            &owned
        }
    };
    let shape = LayerShape::new(model, par, ctx.micro_batch_size);
    let build = |pass| -> Result<LayerDag> {
        let sk = template.instantiate(par, pass);
        let nodes = sk
            .nodes
            .iter()
            .map(|tn| {
                let lane = tn
                    .lane
                    .unwrap_or_else(|| resolve_lane(tn.class, par, ctx.hardware.per_node));
                let work = shape.work(tn.class, &tn.shape, pass);
                let key = shape_key(pass, &tn.shape, model, par, ctx.micro_batch_size);
                let duration_us = ctx
                    .solo
                    .and_then(|s| s.lookup(tn.class, &key))
                    .unwrap_or_else(|| work.duration_us(lane, &ctx.hardware));
                let comm = lane != Lane::Compute;
                OpNode {
                    id: tn.id,
                    class: tn.class,
                    pass,
                    lane,
                    shape: tn.shape.clone(),
                    duration_us,
                    bytes: if comm { work.payload_bytes.round() as u64 } else { 0 },
                    flops: if comm { 0.0 } else { work.flops },
                }
            })
            .collect();
        LayerDag::new(pass, nodes, sk.edges)
    };
    Ok((build(Pass::Forward)?, build(Pass::Backward)?))
}
