//! Segmentations of an operator sequence and the monotone alignment of
//! forward segments with backward segments.
//!
//! An alignment is a list of steps; each step runs one forward segment, one
//! backward segment, or one of each side by side. The minimum-cost
//! alignment satisfies
//!
//! ```text
//! T(0, 0) = 0
//! T(i, j) = min( T(i-1, j-1) + P(i, j),
//!                T(i-1, j)   + P(i, -),
//!                T(i, j-1)   + P(-, j) )
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::OpId;

/// Largest `n_f + n_b` accepted by [`brute_force_align`].
pub const BRUTE_FORCE_LIMIT: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segmentation {
    pub sequence: Vec<OpId>,
    /// Strictly increasing indices in `1..sequence.len()`.
    pub cuts: Vec<usize>,
}

impl Segmentation {
    pub fn new(sequence: Vec<OpId>, cuts: Vec<usize>) -> Result<Self> {
        let s = Segmentation { sequence, cuts };
        if !s.is_valid() {
            return Err(Error::config(format!(
                "cuts {:?} invalid for a sequence of length {}",
                s.cuts,
                s.sequence.len()
            )));
        }
        Ok(s)
    }

    pub fn whole(sequence: Vec<OpId>) -> Self {
        Segmentation { sequence, cuts: Vec::new() }
    }

    /// One segment per operator.
    pub fn singletons(sequence: Vec<OpId>) -> Self {
        let cuts = (1..sequence.len()).collect();
        Segmentation { sequence, cuts }
    }

    pub fn is_valid(&self) -> bool {
        let n = self.sequence.len();
        self.cuts.windows(2).all(|w| w[0] < w[1]) && self.cuts.iter().all(|&c| c > 0 && c < n)
    }

    /// Number of segments; zero for an empty sequence.
    pub fn len(&self) -> usize {
        if self.sequence.is_empty() {
            0
        } else {
            self.cuts.len() + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        if self.sequence.is_empty() {
            return Vec::new();
        }
        let mut bounds = Vec::with_capacity(self.cuts.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cuts);
        bounds.push(self.sequence.len());
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn segment(&self, i: usize) -> &[OpId] {
        let r = self.ranges()[i].clone();
        &self.sequence[r]
    }
}

/// Cut sets of a length-`len` sequence with at most `max_segments` segments,
/// fewest segments first and lexicographic within a segment count, truncated
/// to `max_candidates` entries.
pub fn enumerate_cuts(len: usize, max_segments: usize, max_candidates: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if max_candidates == 0 || max_segments == 0 {
        return out;
    }
    if len == 0 {
        out.push(Vec::new());
        return out;
    }
    for k in 1..=max_segments.min(len) {
        let mut cur = Vec::with_capacity(k - 1);
        if !choose(1, len, k - 1, &mut cur, &mut out, max_candidates) {
            break;
        }
    }
    out
}

fn choose(
    from: usize,
    len: usize,
    need: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
    cap: usize,
) -> bool {
    if need == 0 {
        out.push(cur.clone());
        return out.len() < cap;
    }
    // leave room for the remaining cuts
    for c in from..=len - need {
        cur.push(c);
        let more = choose(c + 1, len, need - 1, cur, out, cap);
        cur.pop();
        if !more {
            return false;
        }
    }
    true
}

pub fn enumerate_segmentations(seq: &[OpId], max_segments: usize, max_candidates: usize) -> Vec<Segmentation> {
    enumerate_cuts(seq.len(), max_segments, max_candidates)
        .into_iter()
        .map(|cuts| Segmentation {
            sequence: seq.to_vec(),
            cuts,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub fwd: Option<usize>,
    pub bwd: Option<usize>,
}

impl Step {
    pub fn paired(f: usize, b: usize) -> Self {
        Step { fwd: Some(f), bwd: Some(b) }
    }

    pub fn forward(f: usize) -> Self {
        Step { fwd: Some(f), bwd: None }
    }

    pub fn backward(b: usize) -> Self {
        Step { fwd: None, bwd: Some(b) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingPlan {
    pub steps: Vec<Step>,
    pub total_us: f64,
}

impl PairingPlan {
    /// Structural violations of the plan against strands with `n_f` and
    /// `n_b` segments; empty when the plan is a valid monotone alignment.
    pub fn violations(&self, n_f: usize, n_b: usize) -> Vec<String> {
        let mut v = Vec::new();
        let (mut next_f, mut next_b) = (0usize, 0usize);
        for (k, s) in self.steps.iter().enumerate() {
            if s.fwd.is_none() && s.bwd.is_none() {
                v.push(format!("step {k} is empty"));
            }
            if let Some(f) = s.fwd {
                if f != next_f {
                    v.push(format!("step {k}: forward segment {f}, expected {next_f}"));
                }
                next_f = f + 1;
            }
            if let Some(b) = s.bwd {
                if b != next_b {
                    v.push(format!("step {k}: backward segment {b}, expected {next_b}"));
                }
                next_b = b + 1;
            }
        }
        if next_f != n_f {
            v.push(format!("plan covers {next_f} of {n_f} forward segments"));
        }
        if next_b != n_b {
            v.push(format!("plan covers {next_b} of {n_b} backward segments"));
        }
        v
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Move {
    Paired,
    Forward,
    Backward,
}

/// Exact minimum-cost alignment. `cost(Some(i), Some(j))` is the cost of a
/// paired step, `cost(Some(i), None)` / `cost(None, Some(j))` of solo steps.
/// Ties prefer pairing, then forward solo, then backward solo.
pub fn dp_align<F>(n_f: usize, n_b: usize, mut cost: F) -> Result<PairingPlan>
where
    F: FnMut(Option<usize>, Option<usize>) -> Result<f64>,
{
    let w = n_b + 1;
    let mut t = vec![f64::INFINITY; (n_f + 1) * w];
    let mut mv = vec![Move::Paired; (n_f + 1) * w];
    t[0] = 0.0;
    for i in 0..=n_f {
        for j in 0..=n_b {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut how = Move::Paired;
            if i > 0 && j > 0 {
                best = t[(i - 1) * w + j - 1] + cost(Some(i - 1), Some(j - 1))?;
            }
            if i > 0 {
                let c = t[(i - 1) * w + j] + cost(Some(i - 1), None)?;
                if c < best {
                    best = c;
                    how = Move::Forward;
                }
            }
            if j > 0 {
                let c = t[i * w + j - 1] + cost(None, Some(j - 1))?;
                if c < best {
                    best = c;
                    how = Move::Backward;
                }
            }
            t[i * w + j] = best;
            mv[i * w + j] = how;
        }
    }
    let mut steps = Vec::with_capacity(n_f + n_b);
    let (mut i, mut j) = (n_f, n_b);
    while i > 0 || j > 0 {
        match mv[i * w + j] {
            Move::Paired => {
                steps.push(Step::paired(i - 1, j - 1));
                i -= 1;
                j -= 1;
            }
            Move::Forward => {
                steps.push(Step::forward(i - 1));
                i -= 1;
            }
            Move::Backward => {
                steps.push(Step::backward(j - 1));
                j -= 1;
            }
        }
    }
    steps.reverse();
    Ok(PairingPlan {
        steps,
        total_us: t[n_f * w + n_b],
    })
}

/// Visits every monotone alignment of `n_f` forward and `n_b` backward
/// segments in depth-first order (paired, forward, backward at each node).
pub fn for_each_alignment(n_f: usize, n_b: usize, mut visit: impl FnMut(&[Step])) {
    fn rec(i: usize, j: usize, n_f: usize, n_b: usize, path: &mut Vec<Step>, visit: &mut dyn FnMut(&[Step])) {
        if i == n_f && j == n_b {
            visit(path);
            return;
        }
        if i < n_f && j < n_b {
            path.push(Step::paired(i, j));
            rec(i + 1, j + 1, n_f, n_b, path, visit);
            path.pop();
        }
        if i < n_f {
            path.push(Step::forward(i));
            rec(i + 1, j, n_f, n_b, path, visit);
            path.pop();
        }
        if j < n_b {
            path.push(Step::backward(j));
            rec(i, j + 1, n_f, n_b, path, visit);
            path.pop();
        }
    }
    let mut path = Vec::with_capacity(n_f + n_b);
    rec(0, 0, n_f, n_b, &mut path, &mut visit);
}

/// Minimum over every monotone alignment, summing step costs in step order.
pub fn brute_force_align<F>(n_f: usize, n_b: usize, mut cost: F) -> Result<PairingPlan>
where
    F: FnMut(Option<usize>, Option<usize>) -> Result<f64>,
{
    if n_f + n_b > BRUTE_FORCE_LIMIT {
        return Err(Error::config(format!(
            "exhaustive alignment limited to {BRUTE_FORCE_LIMIT} segments in total, got {}",
            n_f + n_b
        )));
    }
    let mut best: Option<PairingPlan> = None;
    let mut err = None;
    for_each_alignment(n_f, n_b, |path| {
        if err.is_some() {
            return;
        }
        let mut total = 0.0;
        for s in path {
            match cost(s.fwd, s.bwd) {
                Ok(c) => total += c,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
        }
        if best.as_ref().is_none_or(|b| total < b.total_us) {
            best = Some(PairingPlan {
                steps: path.to_vec(),
                total_us: total,
            });
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(best.expect("at least one alignment exists"))
}
