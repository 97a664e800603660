//! Independent reference implementations used by the integration suites.
//! None of these call into the code they check beyond plain data types.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strandweave::config::{parse_scenario, Scenario};
use strandweave::ops::{Lane, LayerDag, OpId, OpNode, OperatorClass, Pass};
use strandweave::pipeline::{Block, Discipline, PipelineSchedule};
use strandweave::profile::OverlapTable;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const CLASSES: [OperatorClass; 6] = [
    OperatorClass::Gemm,
    OperatorClass::FlashAttention,
    OperatorClass::LayerNorm,
    OperatorClass::AllGather,
    OperatorClass::ReduceScatter,
    OperatorClass::AllToAll,
];

/// Random operator with a duration in `[1, 10)`.
pub fn random_op(rng: &mut ChaCha8Rng, id: OpId, pass: Pass) -> OpNode {
    let class = *CLASSES.choose(rng).unwrap();
    let mut op = OpNode::new(id, class, pass, rng.gen_range(1.0..10.0));
    // some AllToAll traffic leaves the node
    if class == OperatorClass::AllToAll && rng.gen_bool(0.5) {
        op = op.with_lane(Lane::CrossComm);
    }
    op
}

pub fn random_chain(rng: &mut ChaCha8Rng, len: usize, pass: Pass) -> Vec<OpNode> {
    (0..len as OpId).map(|i| random_op(rng, i, pass)).collect()
}

/// Random graph on `n` operators; each forward-pointing pair is an edge
/// with probability `density`. Ids are shuffled so id order is not a
/// topological order.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, density: f64, pass: Pass) -> LayerDag {
    let mut ids: Vec<OpId> = (0..n as OpId).map(|i| 10 + 3 * i).collect();
    ids.shuffle(rng);
    let nodes: Vec<OpNode> = ids.iter().map(|&id| random_op(rng, id, pass)).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(density) {
                edges.push((ids[a], ids[b]));
            }
        }
    }
    LayerDag::new(pass, nodes, edges).expect("forward edges only")
}

/// Every permutation of the graph's ids that keeps each edge in order.
pub fn brute_force_orders(dag: &LayerDag) -> Vec<Vec<OpId>> {
    fn perms(rest: &mut Vec<OpId>, cur: &mut Vec<OpId>, out: &mut Vec<Vec<OpId>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            perms(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut all = Vec::new();
    let mut ids: Vec<OpId> = dag.nodes.iter().map(|n| n.id).collect();
    perms(&mut ids, &mut Vec::new(), &mut all);
    all.into_iter()
        .filter(|seq| {
            let pos = |id: OpId| seq.iter().position(|&x| x == id).unwrap();
            dag.edges.iter().all(|&(a, b)| pos(a) < pos(b))
        })
        .collect()
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Delannoy number: lattice paths with east, north and diagonal steps.
pub fn delannoy(m: usize, n: usize) -> u64 {
    let mut d = vec![vec![1u64; n + 1]; m + 1];
    for i in 1..=m {
        for j in 1..=n {
            d[i][j] = d[i - 1][j] + d[i][j - 1] + d[i - 1][j - 1];
        }
    }
    d[m][n]
}

/// Minimum total over all monotone alignments, by plain recursion.
pub fn min_alignment(n_f: usize, n_b: usize, cost: &dyn Fn(Option<usize>, Option<usize>) -> f64) -> f64 {
    fn rec(i: usize, j: usize, n_f: usize, n_b: usize, acc: f64, cost: &dyn Fn(Option<usize>, Option<usize>) -> f64) -> f64 {
        if i == n_f && j == n_b {
            return acc;
        }
        let mut best = f64::INFINITY;
        if i < n_f && j < n_b {
            best = best.min(rec(i + 1, j + 1, n_f, n_b, acc + cost(Some(i), Some(j)), cost));
        }
        if i < n_f {
            best = best.min(rec(i + 1, j, n_f, n_b, acc + cost(Some(i), None), cost));
        }
        if j < n_b {
            best = best.min(rec(i, j + 1, n_f, n_b, acc + cost(None, Some(j)), cost));
        }
        best
    }
    rec(0, 0, n_f, n_b, 0.0, cost)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum St {
    Ready,
    Running,
    Waiting(f64),
    Done,
}

/// Fixed time-step simulation of two chains under the lane rules: one
/// operator per lane, co-running operators on different lanes progress at
/// `1 / (2 - e)`, same-lane contention goes to the chain with more work
/// left, and a communication operator joining a running peer first waits
/// its launch gap. Accurate to a few `dt` per operator boundary.
pub fn stepped_pair_cost(fwd: &[OpNode], bwd: &[OpNode], tbl: &OverlapTable, dt: f64) -> f64 {
    let chains = [fwd, bwd];
    let mut idx = [0usize; 2];
    let mut rem = [0.0f64; 2];
    let mut st = [St::Done; 2];
    for k in 0..2 {
        if let Some(op) = chains[k].first() {
            rem[k] = op.duration_us;
            st[k] = St::Ready;
        }
    }
    let work_left = |k: usize, idx: &[usize; 2], rem: &[f64; 2], st: &[St; 2]| -> f64 {
        if st[k] == St::Done {
            0.0
        } else {
            rem[k] + chains[k][idx[k] + 1..].iter().map(|o| o.duration_us).sum::<f64>()
        }
    };
    let slow = tbl.interference.slowdown_factor;
    let launch = tbl.interference.launch_overhead_frac;
    let mut t = 0.0;
    loop {
        for k in 0..2 {
            if st[1 - k] == St::Done {
                if let St::Waiting(_) = st[k] {
                    st[k] = St::Ready;
                }
            }
        }
        let lane = |k: usize, idx: &[usize; 2]| chains[k][idx[k]].lane;
        match (st[0] == St::Ready, st[1] == St::Ready) {
            (true, true) => {
                if lane(0, &idx) == lane(1, &idx) {
                    let w = if work_left(1, &idx, &rem, &st) > work_left(0, &idx, &rem, &st) { 1 } else { 0 };
                    st[w] = St::Running;
                } else {
                    st = [St::Running; 2];
                }
            }
            (true, false) | (false, true) => {
                let k = if st[0] == St::Ready { 0 } else { 1 };
                if !(st[1 - k] == St::Running && lane(1 - k, &idx) == lane(k, &idx)) {
                    st[k] = St::Running;
                }
            }
            _ => {}
        }
        if st == [St::Done; 2] {
            return t;
        }
        let rate = if st == [St::Running; 2] {
            let e = tbl
                .lookup(chains[0][idx[0]].class, chains[1][idx[1]].class)
                .unwrap()
                .clamp(0.0, 1.0)
                * (1.0 - slow);
            1.0 / (2.0 - e)
        } else {
            1.0
        };
        t += dt;
        let mut finished = [false; 2];
        for k in 0..2 {
            match st[k] {
                St::Running => {
                    rem[k] -= rate * dt;
                    if rem[k] <= 0.0 {
                        finished[k] = true;
                    }
                }
                St::Waiting(w) => st[k] = if w - dt <= 0.0 { St::Ready } else { St::Waiting(w - dt) },
                _ => {}
            }
        }
        for k in 0..2 {
            if finished[k] {
                idx[k] += 1;
                match chains[k].get(idx[k]) {
                    Some(op) => {
                        rem[k] = op.duration_us;
                        st[k] = St::Ready;
                    }
                    None => st[k] = St::Done,
                }
            }
        }
        for k in 0..2 {
            if finished[k] && st[k] == St::Ready {
                let op = &chains[k][idx[k]];
                if op.lane != Lane::Compute && st[1 - k] == St::Running && launch > 0.0 {
                    st[k] = St::Waiting(launch * op.duration_us);
                }
            }
        }
    }
}

/// Device of a pipeline stage, from the placement rules alone.
pub fn stage_device(disc: Discipline, m: usize, p: usize, mb: usize, stage: usize) -> usize {
    match disc {
        Discipline::OneFOneB => stage,
        Discipline::WShape => {
            if stage < p {
                stage
            } else {
                2 * p - 1 - stage
            }
        }
        Discipline::Bidirectional => {
            if mb < m {
                stage
            } else {
                p - 1 - stage
            }
        }
    }
}

/// Pairwise O(n^2) well-formedness check: coverage, placement, no overlap on
/// a device, and every stage waiting for its producer.
pub fn naive_schedule_ok(s: &PipelineSchedule) -> bool {
    const EPS: f64 = 1e-9;
    let stages = if s.discipline == Discipline::WShape { 2 * s.p } else { s.p };
    let mbs = if s.discipline == Discipline::Bidirectional { 2 * s.m } else { s.m };
    let mut seen_f: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut seen_b: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for b in &s.blocks {
        if !(b.dur_us > 0.0) || b.start_us < -EPS || b.device >= s.p {
            return false;
        }
        let fused = b.fwd_mb.is_some() && b.bwd_mb.is_some();
        if fused && s.discipline != Discipline::WShape {
            return false;
        }
        let kind_ok = match b.kind {
            strandweave::pipeline::BlockKind::SI => fused,
            strandweave::pipeline::BlockKind::F => b.fwd_mb.is_some() && b.bwd_mb.is_none(),
            strandweave::pipeline::BlockKind::B => b.fwd_mb.is_none() && b.bwd_mb.is_some(),
        };
        if !kind_ok || b.fwd_mb.is_some() != b.fwd_stage.is_some() || b.bwd_mb.is_some() != b.bwd_stage.is_some() {
            return false;
        }
        for (mb, stg, seen) in [(b.fwd_mb, b.fwd_stage, &mut seen_f), (b.bwd_mb, b.bwd_stage, &mut seen_b)] {
            if let (Some(mb), Some(stg)) = (mb, stg) {
                if mb >= mbs || stg >= stages || stage_device(s.discipline, s.m, s.p, mb, stg) != b.device {
                    return false;
                }
                *seen.entry((mb, stg)).or_insert(0) += 1;
            }
        }
    }
    let full = |seen: &BTreeMap<(usize, usize), usize>| seen.len() == mbs * stages && seen.values().all(|&c| c == 1);
    if !full(&seen_f) || !full(&seen_b) {
        return false;
    }
    let lat = |a: &Block, b: &Block| if a.device != b.device { s.pp_latency_us } else { 0.0 };
    for a in &s.blocks {
        for b in &s.blocks {
            if std::ptr::eq(a, b) {
                continue;
            }
            if a.device == b.device && a.start_us < b.start_us + b.dur_us - EPS && b.start_us < a.start_us + a.dur_us - EPS
            {
                return false;
            }
            // does b consume something a produces?
            let mut depends = false;
            if let (Some(fa), Some(sa), Some(fb), Some(sb)) = (a.fwd_mb, a.fwd_stage, b.fwd_mb, b.fwd_stage) {
                depends |= fa == fb && sb == sa + 1;
            }
            if let (Some(ba), Some(sa), Some(bb), Some(sb)) = (a.bwd_mb, a.bwd_stage, b.bwd_mb, b.bwd_stage) {
                depends |= ba == bb && sa == sb + 1;
            }
            if let (Some(fa), Some(sa), Some(bb), Some(sb)) = (a.fwd_mb, a.fwd_stage, b.bwd_mb, b.bwd_stage) {
                depends |= fa == bb && sa == stages - 1 && sb == stages - 1;
            }
            if depends && b.start_us + EPS < a.start_us + a.dur_us + lat(a, b) {
                return false;
            }
        }
    }
    true
}

/// Idle unit slots per device, found by probing the midpoint of every slot.
pub fn count_idle_slots(s: &PipelineSchedule, slot: f64) -> Vec<u64> {
    let start = s.blocks.iter().map(|b| b.start_us).fold(f64::INFINITY, f64::min);
    let n = (s.makespan_us() / slot).round() as usize;
    (0..s.p)
        .map(|d| {
            (0..n)
                .filter(|&k| {
                    let mid = start + (k as f64 + 0.5) * slot;
                    !s.blocks
                        .iter()
                        .any(|b| b.device == d && b.start_us <= mid && mid < b.start_us + b.dur_us)
                })
                .count() as u64
        })
        .collect()
}

/// Scenario for a preset model on a preset cluster, filling the cluster
/// with data parallelism.
pub fn preset_scenario(model: &str, cluster: &str, archetype: &str, tp: usize, pp: usize, m: usize) -> Scenario {
    let gpus = strandweave::config::cluster_preset(cluster).unwrap().gpus;
    let text = format!(
        r#"{{
            "name": "{model}@{archetype}",
            "model": "{model}",
            "cluster": "{cluster}",
            "parallelism": {{ "dp": {dp}, "tp": {tp}, "pp": {pp} }},
            "microbatches": {m},
            "profile": {{ "archetype": "{archetype}" }}
        }}"#,
        dp = gpus / (tp * pp)
    );
    parse_scenario(&text, "inline").unwrap()
}

pub fn dense_presets() -> Vec<String> {
    strandweave::config::model_presets()
        .into_iter()
        .filter(|(_, m)| !m.family.is_moe())
        .map(|(name, _)| name)
        .collect()
}
