//! Search for the cheapest interleaving of one layer's forward and backward
//! operator graphs.
//!
//! The outer loop enumerates capped candidate orders for both passes and
//! capped segmentations of each order; the inner loop is the exact
//! alignment DP. Each strand always also tries its one-operator-per-segment
//! and lane-boundary segmentations, so the search is never worse than
//! alternating single operators.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SearchCaps;
use crate::cost::{SegmentCost, SegmentCostModel};
use crate::error::Result;
use crate::ops::{LayerDag, OpId, OpNode};
use crate::pairing::{dp_align, enumerate_segmentations, PairingPlan, Segmentation, Step};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Synchronization cost added to every step.
    pub barrier_us: f64,
    pub parallel: bool,
    /// Add the singleton and lane-boundary segmentations to each strand.
    pub seed_segmentations: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            barrier_us: 0.0,
            parallel: true,
            seed_segmentations: true,
        }
    }
}

/// One executed step of a plan with its operators resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub fwd_ops: Vec<OpId>,
    pub bwd_ops: Vec<OpId>,
    pub p_us: f64,
    pub lane_busy_us: [f64; 3],
    /// Solo time saved by co-running, `max(0, solo sum - p_us)`.
    pub saved_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPlan {
    pub plan: PairingPlan,
    pub fwd_seq: Vec<OpId>,
    pub bwd_seq: Vec<OpId>,
    pub fwd_segmentation: Segmentation,
    pub bwd_segmentation: Segmentation,
    pub steps: Vec<PlanStep>,
    pub total_us: f64,
    pub hidden_comm_frac: f64,
    /// Segmentation pairs evaluated by the alignment DP.
    pub candidates_evaluated: usize,
}

impl BestPlan {
    /// `{steps, total_us, hidden_comm_frac, metadata}` document.
    pub fn to_json(&self, metadata: serde_json::Value) -> Result<String> {
        let doc = serde_json::json!({
            "steps": self.steps,
            "total_us": self.total_us,
            "hidden_comm_frac": self.hidden_comm_frac,
            "metadata": {
                "fwd_seq": self.fwd_seq,
                "bwd_seq": self.bwd_seq,
                "fwd_cuts": self.fwd_segmentation.cuts,
                "bwd_cuts": self.bwd_segmentation.cuts,
                "candidates_evaluated": self.candidates_evaluated,
                "context": metadata,
            }
        });
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }
}

/// Cuts wherever consecutive operators sit on different lanes.
pub fn lane_boundary_segmentation(dag: &LayerDag, seq: &[OpId]) -> Segmentation {
    let ops = dag.resolve(seq).expect("sequence drawn from this graph");
    let cuts = (1..ops.len()).filter(|&i| ops[i].lane != ops[i - 1].lane).collect();
    Segmentation {
        sequence: seq.to_vec(),
        cuts,
    }
}

fn candidate_segmentations(dag: &LayerDag, seq: &[OpId], caps: &SearchCaps, opts: &SearchOptions) -> Vec<Segmentation> {
    let per_strand = (caps.candidates as f64).sqrt().floor().max(1.0) as usize;
    let mut out = enumerate_segmentations(seq, caps.segments, per_strand);
    if opts.seed_segmentations {
        let mut seen: BTreeSet<Vec<usize>> = out.iter().map(|s| s.cuts.clone()).collect();
        for s in [Segmentation::singletons(seq.to_vec()), lane_boundary_segmentation(dag, seq)] {
            if seen.insert(s.cuts.clone()) {
                out.push(s);
            }
        }
    }
    out
}

type RangeKey = (usize, usize, usize, usize);

/// Segment-pair costs for one pair of sequences, memoized by index ranges.
struct CostCache<'a> {
    fwd: Vec<&'a OpNode>,
    bwd: Vec<&'a OpNode>,
    model: &'a dyn SegmentCostModel,
    memo: HashMap<RangeKey, SegmentCost>,
}

impl<'a> CostCache<'a> {
    fn get(&mut self, f: Option<std::ops::Range<usize>>, b: Option<std::ops::Range<usize>>) -> Result<SegmentCost> {
        let f = f.unwrap_or(0..0);
        let b = b.unwrap_or(0..0);
        let key = (f.start, f.end, b.start, b.end);
        if let Some(c) = self.memo.get(&key) {
            return Ok(*c);
        }
        let c = self.model.segment_cost(&self.fwd[f], &self.bwd[b])?;
        self.memo.insert(key, c);
        Ok(c)
    }
}

struct Candidate {
    total: f64,
    index: (usize, usize, usize, usize),
    plan: PairingPlan,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.total < b.total || (a.total == b.total && a.index < b.index)
}

fn align_pair(
    cache: &mut CostCache<'_>,
    fseg: &Segmentation,
    bseg: &Segmentation,
    barrier: f64,
) -> Result<PairingPlan> {
    let fr = fseg.ranges();
    let br = bseg.ranges();
    dp_align(fr.len(), br.len(), |i, j| {
        let c = cache.get(i.map(|i| fr[i].clone()), j.map(|j| br[j].clone()))?;
        Ok(c.p_us + barrier)
    })
}

/// Resolves a plan's steps and the fraction of communication time it hides.
pub fn evaluate_plan(
    fwd: &LayerDag,
    bwd: &LayerDag,
    fseg: &Segmentation,
    bseg: &Segmentation,
    plan: &PairingPlan,
    model: &dyn SegmentCostModel,
) -> Result<(Vec<PlanStep>, f64)> {
    let fr = fseg.ranges();
    let br = bseg.ranges();
    let fops = fwd.resolve(&fseg.sequence).expect("valid forward sequence");
    let bops = bwd.resolve(&bseg.sequence).expect("valid backward sequence");
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut saved = 0.0;
    for s in &plan.steps {
        let f = s.fwd.map(|i| &fops[fr[i].clone()]).unwrap_or(&[]);
        let b = s.bwd.map(|j| &bops[br[j].clone()]).unwrap_or(&[]);
        let c = model.segment_cost(f, b)?;
        let solo: f64 = f.iter().chain(b.iter()).map(|o| o.duration_us).sum();
        // differences at rounding level are not savings
        let saved_us = if solo - c.p_us > 1e-9 * solo { solo - c.p_us } else { 0.0 };
        saved += saved_us;
        steps.push(PlanStep {
            fwd_ops: s.fwd.map(|i| fseg.sequence[fr[i].clone()].to_vec()).unwrap_or_default(),
            bwd_ops: s.bwd.map(|j| bseg.sequence[br[j].clone()].to_vec()).unwrap_or_default(),
            p_us: c.p_us,
            lane_busy_us: c.lane_busy_us,
            saved_us,
        });
    }
    let comm: f64 = fops
        .iter()
        .chain(bops.iter())
        .filter(|o| o.is_communication())
        .map(|o| o.duration_us)
        .sum();
    let hidden = if comm > 0.0 { (saved / comm).min(1.0) } else { 0.0 };
    Ok((steps, hidden))
}

/// Best plan over the capped candidate space. Deterministic in its inputs;
/// the parallel and serial paths return identical plans.
pub fn search_si_plan(
    fwd: &LayerDag,
    bwd: &LayerDag,
    model: &dyn SegmentCostModel,
    caps: &SearchCaps,
    opts: &SearchOptions,
) -> Result<BestPlan> {
    let fseqs = fwd.topological_orders(caps.sequences)?;
    let bseqs = bwd.topological_orders(caps.sequences)?;
    let fsegs: Vec<Vec<Segmentation>> = fseqs.iter().map(|s| candidate_segmentations(fwd, s, caps, opts)).collect();
    let bsegs: Vec<Vec<Segmentation>> = bseqs.iter().map(|s| candidate_segmentations(bwd, s, caps, opts)).collect();
    let pairs: Vec<(usize, usize)> = (0..fseqs.len())
        .flat_map(|a| (0..bseqs.len()).map(move |b| (a, b)))
        .collect();

    let run = |&(a, b): &(usize, usize)| -> Result<(Candidate, usize)> {
        let mut cache = CostCache {
            fwd: fwd.resolve(&fseqs[a]).expect("enumerated order"),
            bwd: bwd.resolve(&bseqs[b]).expect("enumerated order"),
            model,
            memo: HashMap::new(),
        };
        let mut best: Option<Candidate> = None;
        let mut count = 0;
        for (x, fs) in fsegs[a].iter().enumerate() {
            for (y, bs) in bsegs[b].iter().enumerate() {
                let plan = align_pair(&mut cache, fs, bs, opts.barrier_us)?;
                count += 1;
                let cand = Candidate {
                    total: plan.total_us,
                    index: (a, b, x, y),
                    plan,
                };
                if best.as_ref().is_none_or(|cur| better(&cand, cur)) {
                    best = Some(cand);
                }
            }
        }
        Ok((best.expect("every strand has a segmentation"), count))
    };

    let results: Vec<Result<(Candidate, usize)>> = if opts.parallel {
        pairs.par_iter().map(run).collect()
    } else {
        pairs.iter().map(run).collect()
    };
    let mut best: Option<Candidate> = None;
    let mut evaluated = 0;
    for r in results {
        let (cand, n) = r?;
        evaluated += n;
        if best.as_ref().is_none_or(|cur| better(&cand, cur)) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one candidate");
    let (a, b, x, y) = best.index;
    let fseg = fsegs[a][x].clone();
    let bseg = bsegs[b][y].clone();
    let (steps, hidden) = evaluate_plan(fwd, bwd, &fseg, &bseg, &best.plan, model)?;
    Ok(BestPlan {
        total_us: best.plan.total_us,
        plan: best.plan,
        fwd_seq: fseqs[a].clone(),
        bwd_seq: bseqs[b].clone(),
        fwd_segmentation: fseg,
        bwd_segmentation: bseg,
        steps,
        hidden_comm_frac: hidden,
        candidates_evaluated: evaluated,
    })
}

/// Alternates single operators of the first valid orders of both passes;
/// the longer strand finishes alone.
pub fn round_robin_plan(
    fwd: &LayerDag,
    bwd: &LayerDag,
    model: &dyn SegmentCostModel,
    barrier_us: f64,
) -> Result<BestPlan> {
    let fseq = fwd.topological_orders(1)?.remove(0);
    let bseq = bwd.topological_orders(1)?.remove(0);
    let fseg = Segmentation::singletons(fseq.clone());
    let bseg = Segmentation::singletons(bseq.clone());
    let (nf, nb) = (fseg.len(), bseg.len());
    let mut steps: Vec<Step> = (0..nf.min(nb)).map(|k| Step::paired(k, k)).collect();
    steps.extend((nb..nf).map(Step::forward));
    steps.extend((nf..nb).map(Step::backward));
    let mut plan = PairingPlan { steps, total_us: 0.0 };
    let (resolved, hidden) = evaluate_plan(fwd, bwd, &fseg, &bseg, &plan, model)?;
    plan.total_us = resolved.iter().map(|s| s.p_us + barrier_us).sum();
    Ok(BestPlan {
        total_us: plan.total_us,
        plan,
        fwd_seq: fseq,
        bwd_seq: bseq,
        fwd_segmentation: fseg,
        bwd_segmentation: bseg,
        steps: resolved,
        hidden_comm_frac: hidden,
        candidates_evaluated: 1,
    })
}
