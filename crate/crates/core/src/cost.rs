//! Cost of running one forward segment next to one backward segment.
//!
//! Each segment is a serial chain of operators. Operators occupy one of three
//! lanes (compute, node-local communication, cross-node communication):
//!
//! * Two operators on the same lane never run together; the one already
//!   running keeps the lane. When both chains reach the same idle lane at the
//!   same instant, the chain with more remaining work goes first.
//! * Two operators on different lanes run together, each progressing at
//!   `1 / (2 - e)` of its solo speed, where `e` is their pairwise overlap
//!   effectiveness (clamped to `[0, 1]`) scaled by `1 - slowdown_factor`.
//!   For a single pair this is exactly [`overlapped_time`](crate::profile::overlapped_time).
//! * A communication operator that becomes ready while the other chain is
//!   running first waits `launch_overhead_frac * solo time`. The wait ends
//!   early when the other chain finishes.
//!
//! At every instant at least one operator runs at no less than solo speed in
//! aggregate, so the cost of a pair never exceeds the sum of its solo times
//! and never falls below either chain's solo time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Lane, OpNode};
use crate::profile::OverlapTable;

const REL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentCost {
    pub p_us: f64,
    /// Wall time during which each lane (indexed by [`Lane::index`]) is occupied.
    pub lane_busy_us: [f64; 3],
}

impl SegmentCost {
    fn solo(ops: &[&OpNode]) -> Self {
        let mut c = SegmentCost::default();
        for op in ops {
            c.p_us += op.duration_us;
            c.lane_busy_us[op.lane.index()] += op.duration_us;
        }
        c
    }

    pub fn busiest_lane_us(&self) -> f64 {
        self.lane_busy_us.iter().copied().fold(0.0, f64::max)
    }
}

/// Solo time of `ops` summed per lane.
pub fn lane_sums(ops: &[&OpNode]) -> [f64; 3] {
    SegmentCost::solo(ops).lane_busy_us
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Launch gap still to elapse before the current operator may start.
    Waiting(f64),
    Ready,
    Running,
    Done,
}

struct Chain<'a> {
    ops: &'a [&'a OpNode],
    idx: usize,
    remaining: f64,
    phase: Phase,
}

impl<'a> Chain<'a> {
    fn new(ops: &'a [&'a OpNode]) -> Self {
        let mut c = Chain {
            ops,
            idx: 0,
            remaining: 0.0,
            phase: Phase::Done,
        };
        if let Some(op) = ops.first() {
            c.remaining = op.duration_us;
            c.phase = Phase::Ready;
        }
        c
    }

    fn op(&self) -> &'a OpNode {
        self.ops[self.idx]
    }

    fn work_left(&self) -> f64 {
        if self.phase == Phase::Done {
            return 0.0;
        }
        self.remaining + self.ops[self.idx + 1..].iter().map(|o| o.duration_us).sum::<f64>()
    }

    /// Total order used to break same-lane start ties; depends only on what
    /// is left to run, so swapping the chains swaps the winner.
    fn priority_cmp(&self, other: &Chain<'_>) -> std::cmp::Ordering {
        self.work_left()
            .total_cmp(&other.work_left())
            .then_with(|| self.remaining.total_cmp(&other.remaining))
            .then_with(|| {
                let a = self.ops[self.idx..].iter().map(|o| (o.lane.index(), o.class, o.duration_us));
                let b = other.ops[other.idx..].iter().map(|o| (o.lane.index(), o.class, o.duration_us));
                a.map(|(l, c, d)| (l, c, OrdF64(d)))
                    .cmp(b.map(|(l, c, d)| (l, c, OrdF64(d))))
            })
    }

    fn advance(&mut self) {
        self.idx += 1;
        match self.ops.get(self.idx) {
            Some(op) => {
                self.remaining = op.duration_us;
                self.phase = Phase::Ready;
            }
            None => {
                self.remaining = 0.0;
                self.phase = Phase::Done;
            }
        }
    }
}

struct OrdF64(f64);
impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Cost of co-running `fwd` and `bwd` under the lane model. Either side may be
/// empty, in which case the other runs alone.
pub fn segment_pair_cost(fwd: &[&OpNode], bwd: &[&OpNode], tbl: &OverlapTable) -> Result<SegmentCost> {
    if fwd.is_empty() || bwd.is_empty() {
        let mut c = SegmentCost::solo(fwd);
        let o = SegmentCost::solo(bwd);
        c.p_us += o.p_us;
        for l in 0..3 {
            c.lane_busy_us[l] += o.lane_busy_us[l];
        }
        return Ok(c);
    }
    let slow = tbl.interference.slowdown_factor;
    let launch = tbl.interference.launch_overhead_frac;
    let mut ch = [Chain::new(fwd), Chain::new(bwd)];
    let mut cost = SegmentCost::default();
    let mut now = 0.0f64;

    loop {
        for k in 0..2 {
            if ch[1 - k].phase == Phase::Done {
                if let Phase::Waiting(_) = ch[k].phase {
                    ch[k].phase = Phase::Ready;
                }
            }
        }
        // grant lanes to ready operators
        let ready: Vec<usize> = (0..2).filter(|&k| ch[k].phase == Phase::Ready).collect();
        match ready.as_slice() {
            [k] => {
                let o = 1 - k;
                let blocked = ch[o].phase == Phase::Running && ch[o].op().lane == ch[*k].op().lane;
                if !blocked {
                    ch[*k].phase = Phase::Running;
                }
            }
            [_, _] => {
                if ch[0].op().lane == ch[1].op().lane {
                    let winner = if ch[1].priority_cmp(&ch[0]).is_gt() { 1 } else { 0 };
                    ch[winner].phase = Phase::Running;
                } else {
                    ch[0].phase = Phase::Running;
                    ch[1].phase = Phase::Running;
                }
            }
            _ => {}
        }

        if ch.iter().all(|c| c.phase == Phase::Done) {
            break;
        }
        let running: Vec<usize> = (0..2).filter(|&k| ch[k].phase == Phase::Running).collect();
        let rate = if running.len() == 2 {
            let (a, b) = (ch[0].op(), ch[1].op());
            let e = tbl.lookup(a.class, b.class)?.clamp(0.0, 1.0) * (1.0 - slow);
            1.0 / (2.0 - e)
        } else {
            1.0
        };

        // time to the next event
        let mut dt = f64::INFINITY;
        let mut first = None;
        for (k, c) in ch.iter().enumerate() {
            let t = match c.phase {
                Phase::Running => c.remaining / rate,
                Phase::Waiting(w) => w,
                _ => continue,
            };
            if t < dt {
                dt = t;
                first = Some(k);
            }
        }
        let Some(first) = first else {
            return Err(Error::config("segment cost model stalled"));
        };

        now += dt;
        let mut finished = [false; 2];
        for k in 0..2 {
            match ch[k].phase {
                Phase::Running => {
                    cost.lane_busy_us[ch[k].op().lane.index()] += dt;
                    let left = ch[k].remaining - rate * dt;
                    let tol = REL_EPS * ch[k].op().duration_us.max(1.0);
                    if k == first || left <= tol {
                        ch[k].remaining = 0.0;
                        finished[k] = true;
                    } else {
                        ch[k].remaining = left;
                    }
                }
                Phase::Waiting(w) => {
                    let left = w - dt;
                    let tol = REL_EPS * w.max(1.0);
                    ch[k].phase = if k == first || left <= tol {
                        Phase::Ready
                    } else {
                        Phase::Waiting(left)
                    };
                }
                _ => {}
            }
        }
        for k in 0..2 {
            if finished[k] {
                ch[k].advance();
            }
        }
        for k in 0..2 {
            if finished[k] && ch[k].phase == Phase::Ready {
                let op = ch[k].op();
                let peer_running = ch[1 - k].phase == Phase::Running;
                if op.lane != Lane::Compute && peer_running && launch > 0.0 && op.duration_us > 0.0 {
                    ch[k].phase = Phase::Waiting(launch * op.duration_us);
                }
            }
        }
    }
    cost.p_us = now;
    Ok(cost)
}

/// Source of segment-pair costs for the pairing search.
pub trait SegmentCostModel: Sync {
    fn segment_cost(&self, fwd: &[&OpNode], bwd: &[&OpNode]) -> Result<SegmentCost>;
}

/// The lane model over an overlap table.
#[derive(Debug, Clone, Copy)]
pub struct LaneCostModel<'a> {
    pub overlap: &'a OverlapTable,
}

impl<'a> LaneCostModel<'a> {
    pub fn new(overlap: &'a OverlapTable) -> Self {
        LaneCostModel { overlap }
    }
}

impl SegmentCostModel for LaneCostModel<'_> {
    fn segment_cost(&self, fwd: &[&OpNode], bwd: &[&OpNode]) -> Result<SegmentCost> {
        segment_pair_cost(fwd, bwd, self.overlap)
    }
}

/// Label of a segment for measured lookups: `class/shape` per operator,
/// comma separated.
pub fn segment_label(ops: &[&OpNode]) -> String {
    ops.iter()
        .map(|o| format!("{}/{}", o.class, o.shape))
        .collect::<Vec<_>>()
        .join(",")
}

/// Directly measured co-run times keyed by segment labels. Unpaired segments
/// cost their solo sum; paired segments without a measurement fall back to
/// `fallback` or fail.
#[derive(Default)]
pub struct MeasuredSegments<'a> {
    times: BTreeMap<(String, String), f64>,
    fallback: Option<&'a dyn SegmentCostModel>,
}

impl<'a> MeasuredSegments<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(fallback: &'a dyn SegmentCostModel) -> Self {
        MeasuredSegments {
            times: BTreeMap::new(),
            fallback: Some(fallback),
        }
    }

    pub fn insert(&mut self, fwd_label: impl Into<String>, bwd_label: impl Into<String>, p_us: f64) -> Result<()> {
        if !(p_us > 0.0) || !p_us.is_finite() {
            return Err(Error::config(format!("measured segment time must be positive, got {p_us}")));
        }
        self.times.insert((fwd_label.into(), bwd_label.into()), p_us);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

impl SegmentCostModel for MeasuredSegments<'_> {
    fn segment_cost(&self, fwd: &[&OpNode], bwd: &[&OpNode]) -> Result<SegmentCost> {
        if fwd.is_empty() || bwd.is_empty() {
            return segment_pair_cost(fwd, bwd, &OverlapTable::default());
        }
        let key = (segment_label(fwd), segment_label(bwd));
        match self.times.get(&key) {
            Some(&p_us) => {
                let mut busy = lane_sums(fwd);
                for (l, v) in lane_sums(bwd).into_iter().enumerate() {
                    busy[l] = (busy[l] + v).min(p_us);
                }
                for v in &mut busy {
                    *v = v.min(p_us);
                }
                Ok(SegmentCost { p_us, lane_busy_us: busy })
            }
            None => match self.fallback {
                Some(f) => f.segment_cost(fwd, bwd),
                None => Err(Error::MissingSegment(format!("[{}] x [{}]", key.0, key.1))),
            },
        }
    }
}
