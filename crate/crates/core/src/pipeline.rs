//! Pipeline schedules: folded (W-shaped), classic 1F1B and bidirectional.
//!
//! Folding gives every device two layer ranges, one from each end of the
//! model, so a micro-batch visits the device chain twice per pass: down
//! through the front ranges, then back up through the back ranges. A pass
//! therefore has `2p` half-stages, half-stage `s` living on device
//! `s` for `s < p` and `2p - 1 - s` otherwise.
//!
//! In the folded schedule the forward of micro-batch `k + p` at half-stage
//! `s` shares a block with the backward of micro-batch `k` at half-stage
//! `2p - 1 - s`; both live on the same device. The first `p` micro-batches
//! run their forward alone (warmup) and the last `p` their backward alone
//! (cooldown).
//!
//! Block placement happens in two steps: a list scheduler run with the
//! block shapes of the discipline (forward and backward one unit, a fused
//! block two) fixes the order of blocks on each device; start times then
//! follow from that order and the real durations as the earliest time both
//! the device and every dependency are done. Keeping the order fixed makes
//! the makespan monotone in every duration.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuRanges {
    pub front: Range<usize>,
    pub back: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedLayout {
    pub layers: usize,
    pub gpus: Vec<GpuRanges>,
}

impl FoldedLayout {
    pub fn layers_per_range(&self) -> usize {
        self.layers / (2 * self.gpus.len())
    }
}

/// Assigns GPU `k` the layers `[k c, (k+1) c)` and `[L - (k+1) c, L - k c)`
/// with `c = L / 2p`.
pub fn fold_layers(layers: usize, p: usize) -> Result<FoldedLayout> {
    if p == 0 {
        return Err(Error::config("pipeline needs at least one stage"));
    }
    if layers == 0 || !layers.is_multiple_of(2 * p) {
        return Err(Error::Infeasible(format!(
            "{layers} layers cannot be folded over {p} stages: need a multiple of {}",
            2 * p
        )));
    }
    let c = layers / (2 * p);
    let gpus = (0..p)
        .map(|k| GpuRanges {
            front: k * c..(k + 1) * c,
            back: layers - (k + 1) * c..layers - k * c,
        })
        .collect();
    Ok(FoldedLayout { layers, gpus })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    WShape,
    OneFOneB,
    Bidirectional,
}

impl Discipline {
    pub const ALL: [Discipline; 3] = [Discipline::WShape, Discipline::OneFOneB, Discipline::Bidirectional];

    pub fn name(self) -> &'static str {
        match self {
            Discipline::WShape => "w_shape",
            Discipline::OneFOneB => "one_f_one_b",
            Discipline::Bidirectional => "bidirectional",
        }
    }

    /// Stages one pass of one micro-batch traverses.
    pub fn stages(self, p: usize) -> usize {
        match self {
            Discipline::WShape => 2 * p,
            _ => p,
        }
    }

    /// Device hosting `stage` for micro-batches of pipeline `pipe`.
    pub fn device_of(self, pipe: usize, stage: usize, p: usize) -> usize {
        match self {
            Discipline::WShape => {
                if stage < p {
                    stage
                } else {
                    2 * p - 1 - stage
                }
            }
            Discipline::OneFOneB => stage,
            Discipline::Bidirectional => {
                if pipe == 0 {
                    stage
                } else {
                    p - 1 - stage
                }
            }
        }
    }

    /// Multiple of the single-copy model state each device keeps.
    pub fn state_factor(self) -> usize {
        match self {
            Discipline::Bidirectional => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    F,
    B,
    SI,
}

/// Trip of the device chain a block belongs to: the first pass over the
/// devices is `Down`, the return trip of a folded pass is `Up`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    Down,
    Up,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub device: usize,
    pub kind: BlockKind,
    pub fwd_mb: Option<usize>,
    pub bwd_mb: Option<usize>,
    pub fwd_stage: Option<usize>,
    pub bwd_stage: Option<usize>,
    pub half: Half,
    pub start_us: f64,
    pub dur_us: f64,
}

impl Block {
    pub fn end_us(&self) -> f64 {
        self.start_us + self.dur_us
    }

    /// `F3`, `B0`, `SI7/2` style label (forward micro-batch first).
    pub fn label(&self) -> String {
        match (self.fwd_mb, self.bwd_mb) {
            (Some(f), Some(b)) => format!("SI{f}/{b}"),
            (Some(f), None) => format!("F{f}"),
            (None, Some(b)) => format!("B{b}"),
            (None, None) => "?".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDurations {
    pub f_us: f64,
    pub b_us: f64,
    /// Fused forward+backward block; unused by disciplines without fusion.
    pub si_us: f64,
    /// Added to every dependency that crosses devices.
    pub pp_latency_us: f64,
}

impl BlockDurations {
    pub fn new(f_us: f64, b_us: f64, si_us: f64) -> Self {
        BlockDurations {
            f_us,
            b_us,
            si_us,
            pp_latency_us: 0.0,
        }
    }

    /// Forward and backward one unit each, fused blocks two.
    pub fn unit() -> Self {
        Self::new(1.0, 1.0, 2.0)
    }

    fn validate(&self, fused: bool) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.f_us) || !ok(self.b_us) || (fused && !ok(self.si_us)) {
            return Err(Error::config("block durations must be positive"));
        }
        if !(self.pp_latency_us >= 0.0) {
            return Err(Error::config("pipeline latency must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSchedule {
    pub blocks: Vec<Block>,
    /// Micro-batches per pipeline direction.
    pub m: usize,
    pub p: usize,
    pub discipline: Discipline,
    pub pp_latency_us: f64,
}

impl PipelineSchedule {
    pub fn makespan_us(&self) -> f64 {
        let start = self.blocks.iter().map(|b| b.start_us).fold(f64::INFINITY, f64::min);
        let end = self.blocks.iter().map(|b| b.end_us()).fold(f64::NEG_INFINITY, f64::max);
        if self.blocks.is_empty() {
            0.0
        } else {
            end - start
        }
    }

    /// Number of micro-batches in flight over both directions.
    pub fn micro_batches(&self) -> usize {
        self.m * if self.discipline == Discipline::Bidirectional { 2 } else { 1 }
    }

    pub(crate) fn pipe_of(&self, mb: usize) -> usize {
        if self.discipline == Discipline::Bidirectional && mb >= self.m {
            1
        } else {
            0
        }
    }

    pub fn device_blocks(&self, device: usize) -> Vec<&Block> {
        let mut v: Vec<&Block> = self.blocks.iter().filter(|b| b.device == device).collect();
        v.sort_by(|a, b| a.start_us.total_cmp(&b.start_us));
        v
    }
}

// ---- generic two-phase placement -------------------------------------------

#[derive(Debug, Clone)]
struct Task {
    device: usize,
    kind: BlockKind,
    fwd: Option<(usize, usize)>,
    bwd: Option<(usize, usize)>,
    deps: Vec<usize>,
    /// Lower runs first among tasks that could start at the same time.
    priority: (u8, usize, usize),
}

impl Task {
    fn shape(&self) -> f64 {
        match self.kind {
            BlockKind::SI => 2.0,
            _ => 1.0,
        }
    }

    fn duration(&self, d: &BlockDurations) -> f64 {
        match self.kind {
            BlockKind::F => d.f_us,
            BlockKind::B => d.b_us,
            BlockKind::SI => d.si_us,
        }
    }
}

/// Non-delay list scheduling: repeatedly start the task with the earliest
/// feasible start, ties broken by priority. Returns per-device task order.
fn list_order(tasks: &[Task], p: usize) -> Vec<Vec<usize>> {
    let n = tasks.len();
    let mut finish = vec![f64::NAN; n];
    let mut remaining_deps: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    let mut dependents = vec![Vec::new(); n];
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(i);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| remaining_deps[i] == 0).collect();
    let mut free = vec![0.0f64; p];
    let mut order = vec![Vec::new(); p];
    while !ready.is_empty() {
        let est = |i: usize| {
            let dep = tasks[i].deps.iter().map(|&d| finish[d]).fold(0.0, f64::max);
            dep.max(free[tasks[i].device])
        };
        let (pos, &pick) = ready
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                est(a)
                    .total_cmp(&est(b))
                    .then_with(|| tasks[a].priority.cmp(&tasks[b].priority))
            })
            .expect("non-empty");
        let start = est(pick);
        ready.swap_remove(pos);
        finish[pick] = start + tasks[pick].shape();
        free[tasks[pick].device] = finish[pick];
        order[tasks[pick].device].push(pick);
        for &c in &dependents[pick] {
            remaining_deps[c] -= 1;
            if remaining_deps[c] == 0 {
                ready.push(c);
            }
        }
    }
    order
}

/// Earliest start times for a fixed per-device order.
fn place(tasks: &[Task], order: &[Vec<usize>], dur: &BlockDurations) -> Vec<f64> {
    let n = tasks.len();
    let mut start = vec![f64::NAN; n];
    let mut done = vec![false; n];
    let mut cursor = vec![0usize; order.len()];
    let mut free = vec![0.0f64; order.len()];
    let mut placed = 0;
    while placed < n {
        let mut progressed = false;
        for d in 0..order.len() {
            while let Some(&i) = order[d].get(cursor[d]) {
                if !tasks[i].deps.iter().all(|&x| done[x]) {
                    break;
                }
                let mut s = free[d];
                for &x in &tasks[i].deps {
                    let lat = if tasks[x].device != d { dur.pp_latency_us } else { 0.0 };
                    s = s.max(start[x] + tasks[x].duration(dur) + lat);
                }
                start[i] = s;
                free[d] = s + tasks[i].duration(dur);
                done[i] = true;
                cursor[d] += 1;
                placed += 1;
                progressed = true;
            }
        }
        assert!(progressed, "device orders are consistent with dependencies");
    }
    start
}

fn realize(tasks: &[Task], order: &[Vec<usize>], dur: &BlockDurations, m: usize, p: usize, disc: Discipline) -> PipelineSchedule {
    let start = place(tasks, order, dur);
    let half_of = |stage: usize, fwd: bool| {
        let first_trip = if disc == Discipline::WShape {
            if fwd {
                stage < p
            } else {
                stage >= p
            }
        } else {
            true
        };
        if first_trip {
            Half::Down
        } else {
            Half::Up
        }
    };
    let mut blocks: Vec<Block> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Block {
            device: t.device,
            kind: t.kind,
            fwd_mb: t.fwd.map(|x| x.0),
            bwd_mb: t.bwd.map(|x| x.0),
            fwd_stage: t.fwd.map(|x| x.1),
            bwd_stage: t.bwd.map(|x| x.1),
            half: match (t.fwd, t.bwd) {
                (Some((_, s)), _) => half_of(s, true),
                (None, Some((_, s))) => half_of(s, false),
                _ => Half::Down,
            },
            start_us: start[i],
            dur_us: t.duration(dur),
        })
        .collect();
    blocks.sort_by(|a, b| {
        a.device
            .cmp(&b.device)
            .then(a.start_us.total_cmp(&b.start_us))
    });
    PipelineSchedule {
        blocks,
        m,
        p,
        discipline: disc,
        pp_latency_us: dur.pp_latency_us,
    }
}

/// Bookkeeping for pass tasks keyed by (micro-batch, stage).
#[derive(Default)]
struct TaskSet {
    tasks: Vec<Task>,
    fwd: BTreeMap<(usize, usize), usize>,
    bwd: BTreeMap<(usize, usize), usize>,
}

impl TaskSet {
    fn push(&mut self, t: Task) -> usize {
        let i = self.tasks.len();
        if let Some(k) = t.fwd {
            self.fwd.insert(k, i);
        }
        if let Some(k) = t.bwd {
            self.bwd.insert(k, i);
        }
        self.tasks.push(t);
        i
    }

    /// Resolves dependencies once every task exists: forward stage `s`
    /// waits on stage `s - 1`, the last forward stage gates the backward,
    /// backward stage `s` waits on `s + 1`.
    fn link(&mut self, stages: usize) {
        for i in 0..self.tasks.len() {
            let mut deps = Vec::new();
            if let Some((mb, s)) = self.tasks[i].fwd {
                if s > 0 {
                    deps.push(self.fwd[&(mb, s - 1)]);
                }
            }
            if let Some((mb, s)) = self.tasks[i].bwd {
                if s + 1 == stages {
                    deps.push(self.fwd[&(mb, stages - 1)]);
                } else {
                    deps.push(self.bwd[&(mb, s + 1)]);
                }
            }
            deps.retain(|&d| d != i);
            deps.sort_unstable();
            deps.dedup();
            self.tasks[i].deps = deps;
        }
    }
}

fn check_shape(m: usize, p: usize) -> Result<()> {
    if m == 0 || p == 0 {
        return Err(Error::config("pipeline needs m >= 1 and p >= 1"));
    }
    Ok(())
}

fn w_tasks(m: usize, p: usize) -> Vec<Task> {
    let disc = Discipline::WShape;
    let stages = 2 * p;
    let mut set = TaskSet::default();
    let fused = m.saturating_sub(p);
    // warmup forwards
    for k in 0..m.min(p) {
        for s in 0..stages {
            set.push(Task {
                device: disc.device_of(0, s, p),
                kind: BlockKind::F,
                fwd: Some((k, s)),
                bwd: None,
                deps: Vec::new(),
                priority: (0, k, s),
            });
        }
    }
    // steady: forward of k + p fused with backward of k
    for k in 0..fused {
        for s in 0..stages {
            set.push(Task {
                device: disc.device_of(0, s, p),
                kind: BlockKind::SI,
                fwd: Some((k + p, s)),
                bwd: Some((k, stages - 1 - s)),
                deps: Vec::new(),
                priority: (0, k + p, s),
            });
        }
    }
    // cooldown backwards
    for k in fused..m {
        for s in (0..stages).rev() {
            set.push(Task {
                device: disc.device_of(0, s, p),
                kind: BlockKind::B,
                fwd: None,
                bwd: Some((k, s)),
                deps: Vec::new(),
                priority: (0, k + p, stages - 1 - s),
            });
        }
    }
    set.link(stages);
    set.tasks
}

/// Folded schedule with warmup, fused steady phase and cooldown.
pub fn schedule_w_pipeline(m: usize, p: usize, dur: &BlockDurations) -> Result<PipelineSchedule> {
    check_shape(m, p)?;
    dur.validate(m > p)?;
    let tasks = w_tasks(m, p);
    let order = w_order(&tasks, m, p);
    Ok(realize(&tasks, &order, dur, m, p, Discipline::WShape))
}

/// Per-device order for the folded pipeline. Each fused row travels down
/// the device chain and back up like one 1F1B micro-batch, and row `k + p`
/// cannot start before row `k` ends, just as 1F1B device 0 starts forward
/// `k + p` right after backward `k`. So the order is 1F1B over `m + p`
/// virtual micro-batches: `p` forward-only, `m - p` fused, `p` backward-only.
/// Down-trip blocks play the forward role, up-trip blocks the backward role.
fn w_order(tasks: &[Task], m: usize, p: usize) -> Vec<Vec<usize>> {
    let stages = 2 * p;
    let virtual_mbs = m + p;
    // (virtual micro-batch, is up trip) per device
    let mut slot: BTreeMap<(usize, usize, bool), usize> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let (v, s) = match (t.fwd, t.bwd) {
            (Some((k, s)), _) => (k, s),
            (None, Some((k, s))) => (k + p, stages - 1 - s),
            (None, None) => unreachable!("task without a strand"),
        };
        slot.insert((t.device, v, s >= p), i);
    }
    (0..p)
        .map(|d| {
            let warm = (p - d - 1).min(virtual_mbs);
            let mut seq: Vec<(usize, bool)> = (0..warm).map(|v| (v, false)).collect();
            for v in 0..virtual_mbs {
                if warm + v < virtual_mbs {
                    seq.push((warm + v, false));
                }
                seq.push((v, true));
            }
            seq.into_iter().filter_map(|(v, up)| slot.get(&(d, v, up)).copied()).collect()
        })
        .collect()
}

/// Classic one-forward-one-backward schedule: device `d` runs
/// `min(p - d - 1, m)` warmup forwards, alternates, then drains.
pub fn schedule_1f1b(m: usize, p: usize, dur: &BlockDurations) -> Result<PipelineSchedule> {
    check_shape(m, p)?;
    dur.validate(false)?;
    let disc = Discipline::OneFOneB;
    let mut set = TaskSet::default();
    let mut order = vec![Vec::new(); p];
    for (d, dev_order) in order.iter_mut().enumerate() {
        let warm = (p - d - 1).min(m);
        let mut seq = Vec::with_capacity(2 * m);
        for k in 0..warm {
            seq.push((BlockKind::F, k));
        }
        for k in 0..m {
            if warm + k < m {
                seq.push((BlockKind::F, warm + k));
            }
            seq.push((BlockKind::B, k));
        }
        for (kind, k) in seq {
            let (fwd, bwd) = match kind {
                BlockKind::F => (Some((k, d)), None),
                _ => (None, Some((k, d))),
            };
            let i = set.push(Task {
                device: disc.device_of(0, d, p),
                kind,
                fwd,
                bwd,
                deps: Vec::new(),
                priority: (0, k, d),
            });
            dev_order.push(i);
        }
    }
    set.link(p);
    Ok(realize(&set.tasks, &order, dur, m, p, disc))
}

/// Two opposing pipelines over a replicated model: micro-batches `0..m`
/// enter at device 0, micro-batches `m..2m` at device `p - 1`.
pub fn schedule_bidirectional(m: usize, p: usize, dur: &BlockDurations) -> Result<PipelineSchedule> {
    check_shape(m, p)?;
    dur.validate(false)?;
    let disc = Discipline::Bidirectional;
    let mut set = TaskSet::default();
    for pipe in 0..2 {
        for j in 0..m {
            let k = pipe * m + j;
            for s in 0..p {
                set.push(Task {
                    device: disc.device_of(pipe, s, p),
                    kind: BlockKind::F,
                    fwd: Some((k, s)),
                    bwd: None,
                    deps: Vec::new(),
                    priority: (1, j, pipe),
                });
            }
            for s in (0..p).rev() {
                set.push(Task {
                    device: disc.device_of(pipe, s, p),
                    kind: BlockKind::B,
                    fwd: None,
                    bwd: Some((k, s)),
                    deps: Vec::new(),
                    priority: (0, j, pipe),
                });
            }
        }
    }
    set.link(p);
    let order = list_order(&set.tasks, p);
    Ok(realize(&set.tasks, &order, dur, m, p, disc))
}

pub fn schedule(disc: Discipline, m: usize, p: usize, dur: &BlockDurations) -> Result<PipelineSchedule> {
    match disc {
        Discipline::WShape => schedule_w_pipeline(m, p, dur),
        Discipline::OneFOneB => schedule_1f1b(m, p, dur),
        Discipline::Bidirectional => schedule_bidirectional(m, p, dur),
    }
}

// ---- validation ------------------------------------------------------------

/// Every broken schedule invariant, as readable messages. Empty iff the
/// schedule is well formed.
pub fn validate_schedule(sched: &PipelineSchedule) -> Vec<String> {
    let mut v = Vec::new();
    let (p, disc) = (sched.p, sched.discipline);
    let stages = disc.stages(p);
    let mbs = sched.micro_batches();
    let mut fwd: BTreeMap<(usize, usize), &Block> = BTreeMap::new();
    let mut bwd: BTreeMap<(usize, usize), &Block> = BTreeMap::new();

    for (i, b) in sched.blocks.iter().enumerate() {
        if !(b.dur_us > 0.0) || !b.start_us.is_finite() || b.start_us < -TIME_EPS {
            v.push(format!("block {i} ({}) has invalid timing", b.label()));
        }
        if b.device >= p {
            v.push(format!("block {i} on device {} outside 0..{p}", b.device));
        }
        let shape_ok = match b.kind {
            BlockKind::SI => b.fwd_mb.is_some() && b.bwd_mb.is_some(),
            BlockKind::F => b.fwd_mb.is_some() && b.bwd_mb.is_none(),
            BlockKind::B => b.fwd_mb.is_none() && b.bwd_mb.is_some(),
        };
        if !shape_ok || b.fwd_mb.is_some() != b.fwd_stage.is_some() || b.bwd_mb.is_some() != b.bwd_stage.is_some() {
            v.push(format!("block {i} ({:?}) carries the wrong micro-batch ids", b.kind));
        }
        if b.kind == BlockKind::SI && disc != Discipline::WShape {
            v.push(format!("block {i}: fused block in {} schedule", disc.name()));
        }
        for (mb, st, map, what) in [
            (b.fwd_mb, b.fwd_stage, &mut fwd, "forward"),
            (b.bwd_mb, b.bwd_stage, &mut bwd, "backward"),
        ] {
            if let (Some(mb), Some(st)) = (mb, st) {
                if mb >= mbs || st >= stages {
                    v.push(format!("block {i}: {what} ({mb}, {st}) out of range"));
                    continue;
                }
                let pipe = sched.pipe_of(mb);
                if disc.device_of(pipe, st, p) != b.device {
                    v.push(format!("block {i}: {what} stage {st} of micro-batch {mb} on wrong device {}", b.device));
                }
                if map.insert((mb, st), b).is_some() {
                    v.push(format!("{what} stage {st} of micro-batch {mb} scheduled twice"));
                }
            }
        }
    }
    for mb in 0..mbs {
        for st in 0..stages {
            if !fwd.contains_key(&(mb, st)) {
                v.push(format!("forward stage {st} of micro-batch {mb} missing"));
            }
            if !bwd.contains_key(&(mb, st)) {
                v.push(format!("backward stage {st} of micro-batch {mb} missing"));
            }
        }
    }
    if !v.is_empty() {
        return v;
    }
    let lat = |a: &Block, b: &Block| if a.device != b.device { sched.pp_latency_us } else { 0.0 };
    for mb in 0..mbs {
        for st in 0..stages {
            let f = fwd[&(mb, st)];
            if st > 0 {
                let prev = fwd[&(mb, st - 1)];
                if f.start_us + TIME_EPS < prev.end_us() + lat(prev, f) {
                    v.push(format!("forward stage {st} of micro-batch {mb} starts before stage {} ends", st - 1));
                }
            }
            let b = bwd[&(mb, st)];
            let prev = if st + 1 == stages {
                fwd[&(mb, stages - 1)]
            } else {
                bwd[&(mb, st + 1)]
            };
            if !std::ptr::eq(prev, b) && b.start_us + TIME_EPS < prev.end_us() + lat(prev, b) {
                v.push(format!("backward stage {st} of micro-batch {mb} starts before its producer ends"));
            }
        }
    }
    for d in 0..p {
        let blocks = sched.device_blocks(d);
        for w in blocks.windows(2) {
            if w[1].start_us + TIME_EPS < w[0].end_us() {
                v.push(format!("device {d}: {} overlaps {}", w[0].label(), w[1].label()));
            }
        }
    }
    v
}

// ---- metrics ---------------------------------------------------------------

/// Idle time of each device inside the global span of the schedule.
pub fn idle_per_device(sched: &PipelineSchedule) -> Result<Vec<f64>> {
    if sched.blocks.is_empty() {
        return Err(Error::config("empty schedule"));
    }
    let span = sched.makespan_us();
    Ok((0..sched.p)
        .map(|d| {
            let busy: f64 = sched.blocks.iter().filter(|b| b.device == d).map(|b| b.dur_us).sum();
            (span - busy).max(0.0)
        })
        .collect())
}

/// Mean over devices of idle time divided by the schedule span.
pub fn bubble_ratio(sched: &PipelineSchedule) -> Result<f64> {
    let idle = idle_per_device(sched)?;
    let span = sched.makespan_us();
    Ok(idle.iter().sum::<f64>() / idle.len() as f64 / span)
}

/// Idle time per device in units of `slot_us`, rounded to whole slots.
pub fn idle_slots(sched: &PipelineSchedule, slot_us: f64) -> Result<Vec<u64>> {
    Ok(idle_per_device(sched)?
        .into_iter()
        .map(|t| (t / slot_us).round() as u64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpVolume {
    pub transfers: u64,
    pub bytes: f64,
}

/// Send/recv transfers implied by consecutive stages of each micro-batch
/// landing on different devices, in both passes.
pub fn pp_comm_volume(sched: &PipelineSchedule, bytes_per_boundary: f64) -> PpVolume {
    let stages = sched.discipline.stages(sched.p);
    let mut transfers = 0u64;
    for mb in 0..sched.micro_batches() {
        let pipe = sched.pipe_of(mb);
        for st in 1..stages {
            let a = sched.discipline.device_of(pipe, st - 1, sched.p);
            let b = sched.discipline.device_of(pipe, st, sched.p);
            if a != b {
                // once forward, once for the gradient coming back
                transfers += 2;
            }
        }
    }
    PpVolume {
        transfers,
        bytes: transfers as f64 * bytes_per_boundary,
    }
}

/// Times each micro-batch crosses the boundary between devices `d` and
/// `d + 1`, keyed by (micro-batch, is_backward, d), measured from the
/// scheduled blocks.
pub fn boundary_crossings(sched: &PipelineSchedule) -> BTreeMap<(usize, bool, usize), usize> {
    let mut per_pass: BTreeMap<(usize, bool), Vec<(usize, usize)>> = BTreeMap::new();
    for b in &sched.blocks {
        if let (Some(mb), Some(st)) = (b.fwd_mb, b.fwd_stage) {
            per_pass.entry((mb, false)).or_default().push((st, b.device));
        }
        if let (Some(mb), Some(st)) = (b.bwd_mb, b.bwd_stage) {
            per_pass.entry((mb, true)).or_default().push((st, b.device));
        }
    }
    let mut out = BTreeMap::new();
    for ((mb, back), mut path) in per_pass {
        path.sort();
        if back {
            path.reverse();
        }
        for w in path.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            if a != b {
                *out.entry((mb, back, a.min(b))).or_insert(0) += 1;
            }
        }
    }
    out
}

// ---- export ----------------------------------------------------------------

/// Trace-viewer JSON: one complete event per block, one track per device.
pub fn trace_json(sched: &PipelineSchedule) -> Result<String> {
    let events: Vec<serde_json::Value> = sched
        .blocks
        .iter()
        .map(|b| {
            serde_json::json!({
                "name": b.label(),
                "cat": format!("{:?}", b.kind),
                "ph": "X",
                "ts": b.start_us,
                "dur": b.dur_us,
                "pid": 0,
                "tid": b.device,
                "args": {
                    "fwd_mb": b.fwd_mb,
                    "bwd_mb": b.bwd_mb,
                    "fwd_stage": b.fwd_stage,
                    "bwd_stage": b.bwd_stage,
                    "half": b.half,
                }
            })
        })
        .collect();
    let doc = serde_json::json!({
        "traceEvents": events,
        "displayTimeUnit": "ms",
        "otherData": {
            "discipline": sched.discipline.name(),
            "m": sched.m,
            "p": sched.p,
        }
    });
    Ok(serde_json::to_string(&doc)? + "\n")
}

#[derive(Serialize)]
struct BlockRow<'a> {
    device: usize,
    kind: &'a str,
    fwd_mb: Option<usize>,
    bwd_mb: Option<usize>,
    fwd_stage: Option<usize>,
    bwd_stage: Option<usize>,
    half: &'a str,
    start_us: f64,
    dur_us: f64,
}

pub fn blocks_csv(sched: &PipelineSchedule) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in &sched.blocks {
        w.serialize(BlockRow {
            device: b.device,
            kind: match b.kind {
                BlockKind::F => "F",
                BlockKind::B => "B",
                BlockKind::SI => "SI",
            },
            fwd_mb: b.fwd_mb,
            bwd_mb: b.bwd_mb,
            fwd_stage: b.fwd_stage,
            bwd_stage: b.bwd_stage,
            half: match b.half {
                Half::Down => "down",
                Half::Up => "up",
            },
            start_us: b.start_us,
            dur_us: b.dur_us,
        })
        .map_err(|e| Error::config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per device, one character per `slot_us`: `F`, `B`, `S` for a
/// fused block, `.` for idle.
pub fn render_grid(sched: &PipelineSchedule, slot_us: f64) -> Vec<String> {
    let span = sched.makespan_us();
    let slots = (span / slot_us).round() as usize;
    (0..sched.p)
        .map(|d| {
            let mut row = vec!['.'; slots];
            for b in sched.blocks.iter().filter(|b| b.device == d) {
                let c = match b.kind {
                    BlockKind::F => 'F',
                    BlockKind::B => 'B',
                    BlockKind::SI => 'S',
                };
                let s = (b.start_us / slot_us).round() as usize;
                let e = (b.end_us() / slot_us).round() as usize;
                for cell in row.iter_mut().take(e.min(slots)).skip(s) {
                    *cell = c;
                }
            }
            row.into_iter().collect()
        })
        .collect()
}
