//! Per-device memory occupancy over a pipeline schedule.
//!
//! Model state is a constant baseline. A forward block allocates its
//! micro-batch's activations for the layers of that stage when it ends and
//! the matching backward block frees them when it ends. Fused blocks walk
//! their layers one at a time, allocating one forward layer and then freeing
//! one backward layer, so the two strands trade memory at layer granularity.
//! All byte counts are integers so conservation is exact.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{MemoryOptions, ModelSpec, ParallelismSpec};
use crate::error::{Error, Result};
use crate::pipeline::{self, BlockDurations, Discipline, FoldedLayout, PipelineSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryConfig {
    /// Activations kept per layer per micro-batch on one device.
    pub act_bytes_per_layer: u64,
    /// Parameters, gradients and optimizer states per layer on one device.
    pub state_bytes_per_layer: u64,
    pub capacity_bytes: u64,
    /// Tolerated excess of an interleaved schedule over its single-strand peak.
    pub slack_bytes: u64,
}

/// Activation bytes one device keeps for one layer and one micro-batch,
/// 16-bit storage, no recomputation, sequence parallel on.
///
/// Attention keeps the norm input, the projection input, Q, K, V and the
/// fused-attention output: `2 s b (4h + 2kv)`. A gated MLP keeps its norm and
/// input (`4 s b h`) plus gate, up and activated outputs (`6 s b i`); a plain
/// MLP keeps two intermediate tensors (`4 s b i`). An MoE layer keeps the MLP
/// term once per routed expert. The total is sharded by TP, and CP shards the
/// sequence.
pub fn activation_bytes_per_layer(model: &ModelSpec, par: &ParallelismSpec, micro_batch_size: usize) -> u64 {
    let s = (model.seq_len / par.cp.max(1)) as u128;
    let b = micro_batch_size as u128;
    let h = model.hidden as u128;
    let kv = model.kv_width() as u128;
    let i = model.intermediate as u128;
    let attention = 2 * s * b * (4 * h + 2 * kv);
    let per_mlp = match model.mlp_matrices() {
        2 => 4 * s * b * h + 4 * s * b * i,
        _ => 4 * s * b * h + 6 * s * b * i,
    };
    let mlp = if model.family.is_moe() {
        per_mlp * model.topk.unwrap_or(1) as u128
    } else {
        per_mlp
    };
    ((attention + mlp) / par.tp.max(1) as u128) as u64
}

/// Model-state bytes one device keeps per hosted layer. Attention weights are
/// sharded by TP, expert weights by TP and EP.
pub fn state_bytes_per_layer(model: &ModelSpec, par: &ParallelismSpec, bytes_per_param: f64) -> u64 {
    let tp = par.tp.max(1) as f64;
    let mlp_shard = if model.family.is_moe() { tp * par.ep.max(1) as f64 } else { tp };
    let params = model.attention_params() / tp + model.mlp_params() / mlp_shard;
    (params * bytes_per_param).round() as u64
}

impl MemoryConfig {
    pub fn from_model(
        model: &ModelSpec,
        par: &ParallelismSpec,
        micro_batch_size: usize,
        opts: &MemoryOptions,
        capacity_bytes: f64,
    ) -> Self {
        MemoryConfig {
            act_bytes_per_layer: activation_bytes_per_layer(model, par, micro_batch_size),
            state_bytes_per_layer: state_bytes_per_layer(model, par, opts.state_bytes_per_param),
            capacity_bytes: capacity_bytes.max(0.0) as u64,
            slack_bytes: (opts.slack_mb * 1e6).max(0.0) as u64,
        }
    }
}

/// Layer count of every stage of one pipeline pass, plus the device mapping
/// implied by the discipline: folded for `w_shape`, linear for 1F1B,
/// replicated for the bidirectional pair of pipelines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryLayout {
    pub discipline: Discipline,
    pub p: usize,
    pub stage_layers: Vec<usize>,
}

impl MemoryLayout {
    pub fn folded(layout: &FoldedLayout) -> Self {
        let p = layout.gpus.len();
        let stage_layers = (0..2 * p)
            .map(|s| {
                let g = &layout.gpus[if s < p { s } else { 2 * p - 1 - s }];
                if s < p {
                    g.front.len()
                } else {
                    g.back.len()
                }
            })
            .collect();
        MemoryLayout {
            discipline: Discipline::WShape,
            p,
            stage_layers,
        }
    }

    /// Even split; `layers` must divide across the discipline's stages.
    pub fn even(discipline: Discipline, layers: usize, p: usize) -> Result<Self> {
        if discipline == Discipline::WShape {
            return Ok(Self::folded(&pipeline::fold_layers(layers, p)?));
        }
        if p == 0 || layers == 0 || !layers.is_multiple_of(p) {
            return Err(Error::Infeasible(format!("{layers} layers do not split evenly over {p} stages")));
        }
        Ok(MemoryLayout {
            discipline,
            p,
            stage_layers: vec![layers / p; p],
        })
    }

    /// Near-even split for arbitrary layer counts: the remainder goes one
    /// layer each to the last stages. Adding a layer never shrinks a stage.
    pub fn balanced(discipline: Discipline, layers: usize, p: usize) -> Result<Self> {
        let stages = discipline.stages(p);
        if p == 0 || layers < stages {
            return Err(Error::Infeasible(format!(
                "{layers} layers cannot fill {stages} stages"
            )));
        }
        let (q, r) = (layers / stages, layers % stages);
        let stage_layers = (0..stages).map(|s| q + usize::from(s >= stages - r)).collect();
        Ok(MemoryLayout {
            discipline,
            p,
            stage_layers,
        })
    }

    pub fn layers(&self) -> usize {
        self.stage_layers.iter().sum()
    }

    /// Layers whose model state lives on `device`.
    pub fn hosted_layers(&self, device: usize) -> usize {
        let pipes = self.discipline.state_factor();
        (0..pipes)
            .flat_map(|pipe| (0..self.stage_layers.len()).map(move |s| (pipe, s)))
            .filter(|&(pipe, s)| self.discipline.device_of(pipe, s, self.p) == device)
            .map(|(_, s)| self.stage_layers[s])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceMemory {
    pub device: usize,
    pub baseline_bytes: u64,
    pub peak_bytes: u64,
    /// Piecewise-constant occupancy: bytes from each time until the next point.
    pub points: Vec<(f64, u64)>,
}

impl DeviceMemory {
    pub fn final_bytes(&self) -> u64 {
        self.points.last().map_or(self.baseline_bytes, |p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryTimeline {
    pub discipline: Discipline,
    pub devices: Vec<DeviceMemory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSummary {
    pub discipline: Discipline,
    pub peak_bytes: u64,
    pub per_device_peak_bytes: Vec<u64>,
    pub baseline_bytes: Vec<u64>,
    pub capacity_bytes: u64,
    pub over_capacity_devices: Vec<usize>,
}

impl MemoryTimeline {
    pub fn peak_bytes(&self) -> u64 {
        self.devices.iter().map(|d| d.peak_bytes).max().unwrap_or(0)
    }

    /// Devices whose peak exceeds the capacity.
    pub fn over_capacity(&self, cfg: &MemoryConfig) -> Vec<usize> {
        self.devices
            .iter()
            .filter(|d| d.peak_bytes > cfg.capacity_bytes)
            .map(|d| d.device)
            .collect()
    }

    pub fn summary(&self, cfg: &MemoryConfig) -> PeakSummary {
        PeakSummary {
            discipline: self.discipline,
            peak_bytes: self.peak_bytes(),
            per_device_peak_bytes: self.devices.iter().map(|d| d.peak_bytes).collect(),
            baseline_bytes: self.devices.iter().map(|d| d.baseline_bytes).collect(),
            capacity_bytes: cfg.capacity_bytes,
            over_capacity_devices: self.over_capacity(cfg),
        }
    }

    /// `device,t_us,bytes` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["device", "t_us", "bytes"]).map_err(csv_err)?;
        for d in &self.devices {
            for &(t, bytes) in &d.points {
                w.write_record([d.device.to_string(), t.to_string(), bytes.to_string()])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("csv: {e}"))
}

/// Signed byte delta; `seq` keeps emission order among equal times.
#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    seq: usize,
    delta: i128,
}

pub fn simulate_memory(sched: &PipelineSchedule, layout: &MemoryLayout, cfg: &MemoryConfig) -> Result<MemoryTimeline> {
    if layout.discipline != sched.discipline || layout.p != sched.p {
        return Err(Error::config(format!(
            "memory layout for {} over {} devices does not match a {} schedule over {}",
            layout.discipline.name(),
            layout.p,
            sched.discipline.name(),
            sched.p
        )));
    }
    let stages = layout.stage_layers.len();
    let layers_of = |stage: usize| -> Result<u64> {
        layout
            .stage_layers
            .get(stage)
            .map(|&l| l as u64)
            .ok_or_else(|| Error::config(format!("stage {stage} outside a {stages}-stage layout")))
    };
    let act = cfg.act_bytes_per_layer as i128;
    let mut events: Vec<Vec<Event>> = vec![Vec::new(); sched.p];
    for b in &sched.blocks {
        let ev = &mut events[b.device];
        match (b.fwd_stage, b.bwd_stage) {
            (Some(fs), Some(bs)) => {
                // one forward layer in, then one backward layer out, per step
                let (lf, lb) = (layers_of(fs)?, layers_of(bs)?);
                let steps = lf.max(lb).max(1);
                for i in 0..steps {
                    let t = b.start_us + b.dur_us * (i + 1) as f64 / steps as f64;
                    let seq = ev.len();
                    if i < lf {
                        ev.push(Event { t, seq, delta: act });
                    }
                    if i < lb {
                        ev.push(Event { t, seq: seq + 1, delta: -act });
                    }
                }
            }
            (Some(fs), None) => {
                let seq = ev.len();
                ev.push(Event {
                    t: b.end_us(),
                    seq,
                    delta: act * layers_of(fs)? as i128,
                });
            }
            (None, Some(bs)) => {
                let seq = ev.len();
                ev.push(Event {
                    t: b.end_us(),
                    seq,
                    delta: -act * layers_of(bs)? as i128,
                });
            }
            (None, None) => {}
        }
    }
    let mut devices = Vec::with_capacity(sched.p);
    for (d, mut ev) in events.into_iter().enumerate() {
        // Blocks on one device never overlap, so only steps of the same
        // block share a time and they keep their allocate-then-free order.
        ev.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.seq.cmp(&b.seq)));
        let baseline = layout.hosted_layers(d) as u64 * cfg.state_bytes_per_layer;
        let mut cur = baseline as i128;
        let mut peak = cur;
        let mut points = vec![(0.0, baseline)];
        for e in ev {
            cur += e.delta;
            if cur < baseline as i128 {
                return Err(Error::config(format!(
                    "device {d} frees activations it never allocated at t={}",
                    e.t
                )));
            }
            peak = peak.max(cur);
            match points.last_mut() {
                Some(last) if last.0 == e.t => last.1 = cur as u64,
                _ => points.push((e.t, cur as u64)),
            }
        }
        devices.push(DeviceMemory {
            device: d,
            baseline_bytes: baseline,
            peak_bytes: peak as u64,
            points,
        });
    }
    Ok(MemoryTimeline {
        discipline: sched.discipline,
        devices,
    })
}

/// Geometry used for capacity sweeps. Peaks depend only on per-device
/// block order, which these durations fix.
pub fn reference_durations(discipline: Discipline) -> BlockDurations {
    match discipline {
        Discipline::WShape => BlockDurations::new(0.5, 0.5, 1.0),
        _ => BlockDurations::new(1.0, 1.0, 2.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFit {
    pub discipline: Discipline,
    pub layers: usize,
    pub param_count: f64,
    pub peak_bytes: u64,
}

/// Peak bytes of the busiest device for `layers` layers.
pub fn peak_for_layers(sched: &PipelineSchedule, layers: usize, cfg: &MemoryConfig) -> Result<u64> {
    let layout = MemoryLayout::balanced(sched.discipline, layers, sched.p)?;
    Ok(simulate_memory(sched, &layout, cfg)?.peak_bytes())
}

/// Largest layer count whose simulated peak fits the capacity, found by
/// binary search over the near-even layouts.
pub fn max_model_size(
    base: &ModelSpec,
    par: &ParallelismSpec,
    cfg: &MemoryConfig,
    discipline: Discipline,
    microbatches: usize,
) -> Result<ModelFit> {
    let p = par.pp;
    let sched = pipeline::schedule(discipline, microbatches, p, &reference_durations(discipline))?;
    let fits = |layers: usize| -> Result<Option<u64>> {
        let peak = peak_for_layers(&sched, layers, cfg)?;
        Ok((peak <= cfg.capacity_bytes).then_some(peak))
    };
    let lo_layers = discipline.stages(p);
    let Some(mut lo_peak) = fits(lo_layers)? else {
        return Err(Error::Infeasible(format!(
            "{} stages of one layer each already exceed {} bytes",
            lo_layers, cfg.capacity_bytes
        )));
    };
    if cfg.state_bytes_per_layer == 0 && cfg.act_bytes_per_layer == 0 {
        return Err(Error::config("per-layer memory is zero; model size is unbounded"));
    }
    // invariant: lo fits, hi does not
    let mut lo = lo_layers;
    let mut hi = lo_layers * 2;
    while let Some(peak) = fits(hi)? {
        lo = hi;
        lo_peak = peak;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match fits(mid)? {
            Some(peak) => {
                lo = mid;
                lo_peak = peak;
            }
            None => hi = mid,
        }
    }
    Ok(ModelFit {
        discipline,
        layers: lo,
        param_count: base.with_layers(lo).param_count(),
        peak_bytes: lo_peak,
    })
}

/// Peak per discipline for the same model, keyed by discipline name.
pub fn peaks_by_discipline(
    layers: usize,
    p: usize,
    microbatches: usize,
    cfg: &MemoryConfig,
) -> Result<BTreeMap<&'static str, u64>> {
    let mut out = BTreeMap::new();
    for disc in Discipline::ALL {
        let sched = pipeline::schedule(disc, microbatches, p, &reference_durations(disc))?;
        let layout = MemoryLayout::even(disc, layers, p)?;
        out.insert(disc.name(), simulate_memory(&sched, &layout, cfg)?.peak_bytes());
    }
    Ok(out)
}
