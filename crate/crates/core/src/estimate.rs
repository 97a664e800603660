//! End-to-end iteration estimates and the baseline comparison report.
//!
//! Every plan source builds the same per-layer operator graphs from the same
//! profile and differs only in how a layer's forward and backward run:
//!
//! - `megatron_baseline`: both passes sequential, 1F1B over a linear layout.
//! - `intra_batch`: as the baseline with a fixed fraction of TP collective
//!   time hidden inside each pass.
//! - `wavelet_rr`: folded W pipeline; fused blocks alternate single operators
//!   of the two strands.
//! - `strand_interleave`: folded W pipeline; fused blocks run the searched
//!   pairing plan.
//!
//! A pipeline block covers all layers of its stage, so block durations are
//! per-layer times scaled by layers per stage. Data-parallel gradient
//! synchronization is left out of the makespan.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ProfileSource, Scenario};
use crate::cost::LaneCostModel;
use crate::error::{Error, Result};
use crate::memory::{simulate_memory, MemoryConfig, MemoryLayout};
use crate::ops::{LayerDag, OperatorClass};
use crate::pipeline::{self, BlockDurations, Discipline, PipelineSchedule};
use crate::profile::{load_profile, synth_profile, Archetype, Profile};
use crate::roofline::Hardware;
use crate::search::{round_robin_plan, search_si_plan, SearchOptions};
use crate::template::{build_layer_dag, LayerContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    MegatronBaseline,
    IntraBatch,
    WaveletRr,
    StrandInterleave,
}

impl PlanSource {
    pub const ALL: [PlanSource; 4] = [
        PlanSource::MegatronBaseline,
        PlanSource::IntraBatch,
        PlanSource::WaveletRr,
        PlanSource::StrandInterleave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlanSource::MegatronBaseline => "megatron_baseline",
            PlanSource::IntraBatch => "intra_batch",
            PlanSource::WaveletRr => "wavelet_rr",
            PlanSource::StrandInterleave => "strand_interleave",
        }
    }

    pub fn discipline(self) -> Discipline {
        match self {
            PlanSource::MegatronBaseline | PlanSource::IntraBatch => Discipline::OneFOneB,
            PlanSource::WaveletRr | PlanSource::StrandInterleave => Discipline::WShape,
        }
    }
}

impl fmt::Display for PlanSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlanSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlanSource::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown plan source `{s}`")))
    }
}

/// Loads or synthesizes the profile a scenario names. Relative paths are
/// taken as given (relative to the working directory).
pub fn resolve_profile(scenario: &Scenario) -> Result<Profile> {
    match &scenario.profile {
        ProfileSource::Archetype(name) => Ok(synth_profile(name.parse::<Archetype>()?)),
        ProfileSource::Path(path) => load_profile(path),
    }
}

/// Per-layer operator graphs of a scenario under a profile.
pub fn layer_dags(scenario: &Scenario, profile: &Profile) -> Result<(LayerDag, LayerDag)> {
    let mut ctx = LayerContext::new(Hardware::from_cluster(&scenario.cluster, scenario.options.bw_efficiency));
    ctx.micro_batch_size = scenario.micro_batch_size;
    ctx.solo = Some(&profile.solo);
    build_layer_dag(&scenario.model, &scenario.parallelism, &ctx)
}

/// Timing of one layer under one plan source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTiming {
    pub fwd_us: f64,
    pub bwd_us: f64,
    /// Fused forward+backward time; `fwd_us + bwd_us` when nothing overlaps.
    pub si_us: f64,
    /// Share of the layer's communication time hidden where the plan applies.
    pub plan_hidden_frac: f64,
}

fn comm_us(dag: &LayerDag, pred: impl Fn(OperatorClass) -> bool) -> f64 {
    dag.communication_nodes()
        .filter(|n| pred(n.class))
        .map(|n| n.duration_us)
        .sum()
}

pub fn layer_timing(
    source: PlanSource,
    fwd: &LayerDag,
    bwd: &LayerDag,
    profile: &Profile,
    scenario: &Scenario,
) -> Result<LayerTiming> {
    let (f, b) = (fwd.total_duration_us(), bwd.total_duration_us());
    let model = LaneCostModel::new(&profile.overlap);
    let opts = &scenario.options;
    Ok(match source {
        PlanSource::MegatronBaseline => LayerTiming {
            fwd_us: f,
            bwd_us: b,
            si_us: f + b,
            plan_hidden_frac: 0.0,
        },
        PlanSource::IntraBatch => {
            let tp = |c| matches!(c, OperatorClass::AllGather | OperatorClass::ReduceScatter);
            let (tf, tb) = (comm_us(fwd, tp), comm_us(bwd, tp));
            let all = comm_us(fwd, |_| true) + comm_us(bwd, |_| true);
            let frac = opts.intra_batch_hidden_frac;
            LayerTiming {
                fwd_us: f - frac * tf,
                bwd_us: b - frac * tb,
                si_us: f + b - frac * (tf + tb),
                plan_hidden_frac: if all > 0.0 { frac * (tf + tb) / all } else { 0.0 },
            }
        }
        PlanSource::WaveletRr => {
            let plan = round_robin_plan(fwd, bwd, &model, opts.barrier_us)?;
            LayerTiming {
                fwd_us: f,
                bwd_us: b,
                si_us: plan.total_us,
                plan_hidden_frac: plan.hidden_comm_frac,
            }
        }
        PlanSource::StrandInterleave => {
            let search = SearchOptions {
                barrier_us: opts.barrier_us,
                parallel: opts.parallel_search,
                seed_segmentations: true,
            };
            let plan = search_si_plan(fwd, bwd, &model, &scenario.caps, &search)?;
            LayerTiming {
                fwd_us: f,
                bwd_us: b,
                si_us: plan.total_us,
                plan_hidden_frac: plan.hidden_comm_frac,
            }
        }
    })
}

/// Block durations for `layers_per_stage` layers of a stage.
pub fn block_durations(t: &LayerTiming, layers_per_stage: usize, pp_latency_us: f64) -> BlockDurations {
    let c = layers_per_stage as f64;
    BlockDurations {
        f_us: c * t.fwd_us,
        b_us: c * t.bwd_us,
        si_us: c * t.si_us,
        pp_latency_us,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationEstimate {
    pub plan_source: PlanSource,
    pub discipline: Discipline,
    pub layer: LayerTiming,
    pub makespan_us: f64,
    pub tflops_per_gpu: f64,
    pub mfu: f64,
    /// Share of the iteration's layer communication time hidden.
    pub hidden_comm_frac: f64,
    pub bubble_ratio: f64,
    pub peak_memory_bytes: u64,
    #[serde(skip)]
    pub schedule: PipelineSchedule,
}

/// Layers each stage of the discipline holds; errors when they do not split evenly.
pub fn layers_per_stage(discipline: Discipline, layers: usize, p: usize) -> Result<usize> {
    match discipline {
        Discipline::WShape => Ok(pipeline::fold_layers(layers, p)?.layers_per_range()),
        _ => {
            if !layers.is_multiple_of(p) {
                return Err(Error::Infeasible(format!("{layers} layers do not split over {p} stages")));
            }
            Ok(layers / p)
        }
    }
}

pub fn estimate_iteration_time(
    scenario: &Scenario,
    profile: &Profile,
    source: PlanSource,
) -> Result<IterationEstimate> {
    let (fwd, bwd) = layer_dags(scenario, profile)?;
    estimate_with_dags(scenario, profile, source, &fwd, &bwd)
}

fn estimate_with_dags(
    scenario: &Scenario,
    profile: &Profile,
    source: PlanSource,
    fwd: &LayerDag,
    bwd: &LayerDag,
) -> Result<IterationEstimate> {
    let par = &scenario.parallelism;
    let (m, p, layers) = (scenario.microbatches, par.pp, scenario.model.layers);
    let disc = source.discipline();
    let per_stage = layers_per_stage(disc, layers, p)?;
    let layer = layer_timing(source, fwd, bwd, profile, scenario)?;
    let dur = block_durations(&layer, per_stage, scenario.options.pp_latency_us);
    let schedule = pipeline::schedule(disc, m, p, &dur)?;
    let makespan_us = schedule.makespan_us();

    // each device hosts layers / p layers and runs every micro-batch through them
    let layer_flops: f64 = fwd.nodes.iter().chain(bwd.nodes.iter()).map(|n| n.flops).sum();
    let device_flops = layer_flops * (layers / p) as f64 * m as f64;
    let tflops_per_gpu = if makespan_us > 0.0 {
        device_flops / (makespan_us * 1e-6) / 1e12
    } else {
        0.0
    };
    let mfu = tflops_per_gpu / scenario.cluster.peak_tflops;

    // fused blocks cover m - p forward and m - p backward passes of the m
    let fused_share = if disc == Discipline::WShape {
        m.saturating_sub(p) as f64 / m as f64
    } else {
        1.0
    };
    let hidden_comm_frac = layer.plan_hidden_frac * fused_share;

    let cfg = MemoryConfig::from_model(
        &scenario.model,
        par,
        scenario.micro_batch_size,
        &scenario.memory,
        scenario.capacity_bytes(),
    );
    let mem_layout = MemoryLayout::even(disc, layers, p)?;
    let peak_memory_bytes = simulate_memory(&schedule, &mem_layout, &cfg)?.peak_bytes();

    Ok(IterationEstimate {
        plan_source: source,
        discipline: disc,
        layer,
        makespan_us,
        tflops_per_gpu,
        mfu,
        hidden_comm_frac,
        bubble_ratio: pipeline::bubble_ratio(&schedule)?,
        peak_memory_bytes,
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub plan_source: PlanSource,
    pub discipline: Discipline,
    pub makespan_us: f64,
    pub speedup: f64,
    pub hidden_comm_frac: f64,
    pub peak_memory_bytes: u64,
    pub bubble_ratio: f64,
    pub tflops_per_gpu: f64,
    pub mfu: f64,
    pub layer_si_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    /// SHA-256 of the resolved scenario and profile.
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

/// Hex SHA-256 over the canonical JSON of the scenario and the profile.
pub fn config_hash(scenario: &Scenario, profile: &Profile) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(scenario)?);
    h.update(b"\n");
    h.update(profile.to_json()?.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// One row per plan source; speedups are relative to `megatron_baseline`.
pub fn compare_report(scenario: &Scenario, profile: &Profile) -> Result<CompareReport> {
    let (fwd, bwd) = layer_dags(scenario, profile)?;
    let estimates = PlanSource::ALL
        .iter()
        .map(|&s| estimate_with_dags(scenario, profile, s, &fwd, &bwd))
        .collect::<Result<Vec<_>>>()?;
    let base = estimates[0].makespan_us;
    let rows = estimates
        .iter()
        .map(|e| ReportRow {
            plan_source: e.plan_source,
            discipline: e.discipline,
            makespan_us: e.makespan_us,
            speedup: if e.makespan_us > 0.0 { base / e.makespan_us } else { 1.0 },
            hidden_comm_frac: e.hidden_comm_frac,
            peak_memory_bytes: e.peak_memory_bytes,
            bubble_ratio: e.bubble_ratio,
            tflops_per_gpu: e.tflops_per_gpu,
            mfu: e.mfu,
            layer_si_us: e.layer.si_us,
        })
        .collect();
    Ok(CompareReport {
        scenario: scenario.name.clone(),
        config_hash: config_hash(scenario, profile)?,
        seed: scenario.seed,
        rows,
    })
}

impl CompareReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::config(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn row(&self, source: PlanSource) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.plan_source == source)
    }
}
