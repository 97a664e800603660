use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use strandweave::config::{list_presets, load_scenario, ProfileSource, Scenario, SearchCaps};
use strandweave::cost::LaneCostModel;
use strandweave::error::{Error, Result};
use strandweave::estimate::{
    block_durations, compare_report, estimate_iteration_time, layer_dags, layer_timing, layers_per_stage,
    resolve_profile, PlanSource,
};
use strandweave::io::write_atomic;
use strandweave::memory::{max_model_size, simulate_memory, MemoryConfig, MemoryLayout};
use strandweave::pipeline::{self, BlockDurations, Discipline, PipelineSchedule};
use strandweave::profile::{load_profile, synth_profile, Archetype};
use strandweave::search::{search_si_plan, SearchOptions};

#[derive(Parser)]
#[command(name = "strandweave", version, about = "Plan and simulate interleaved forward/backward training schedules")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Profile file overriding the scenario's profile source.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Directory for output files; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed recorded in reports, overriding the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Search caps, e.g. `seq=16,segs=6,cands=4096`.
    #[arg(long, global = true)]
    caps: Option<String>,
    /// Also write an event trace of the pipeline schedule.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// List model, cluster and archetype presets.
    Presets,
    /// Synthesize or validate an operator profile.
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// Search the best pairing plan for one layer.
    Search,
    /// Build a pipeline schedule and report bubbles and transfers.
    Pipeline {
        #[arg(long, value_parser = parse_discipline)]
        discipline: Option<Discipline>,
        /// Plan source supplying block durations in scenario mode.
        #[arg(long, default_value = "strand_interleave")]
        plan_source: PlanSource,
        /// Micro-batches and stages in geometry mode (no scenario).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
    },
    /// Simulate memory and find the largest model that fits.
    Memory,
    /// Estimate iteration time for one or all plan sources.
    Estimate {
        #[arg(long)]
        plan_source: Option<PlanSource>,
    },
    /// Compare all plan sources and write JSON and CSV reports.
    Compare,
}

#[derive(Subcommand)]
enum ProfileAction {
    /// Write a synthetic profile for an archetype.
    Synth {
        #[arg(long, default_value = "pcie_a40")]
        archetype: Archetype,
    },
    /// Load a profile file and check it.
    Validate { file: PathBuf },
}

fn parse_discipline(s: &str) -> std::result::Result<Discipline, String> {
    Discipline::ALL
        .into_iter()
        .find(|d| d.name() == s)
        .ok_or_else(|| format!("expected one of w_shape, one_f_one_b, bidirectional; got `{s}`"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Writes `name` under `--out`, or prints it when no directory was given.
fn emit(common: &Common, name: &str, text: &str) -> Result<()> {
    match &common.out {
        Some(dir) => {
            let path = dir.join(name);
            write_atomic(&path, text.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn json(v: &impl serde::Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn scenario(common: &Common) -> Result<Scenario> {
    let path = common
        .scenario
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --scenario".into()))?;
    let mut sc = load_scenario(path)?;
    if let Some(p) = &common.profile {
        sc.profile = ProfileSource::Path(p.display().to_string());
    }
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    if let Some(caps) = &common.caps {
        sc.caps = SearchCaps::parse(caps)?;
    }
    Ok(sc)
}

fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Presets => emit(common, "presets.json", &json(&list_presets())?),
        Command::Profile { action } => match action {
            ProfileAction::Synth { archetype } => {
                let text = synth_profile(*archetype).to_json()?;
                emit(common, &format!("profile_{archetype}.json"), &text)
            }
            ProfileAction::Validate { file } => {
                let p = load_profile(file)?;
                let summary = serde_json::json!({
                    "file": file.display().to_string(),
                    "solo_entries": p.solo.len(),
                    "oef_pairs": p.overlap.len(),
                    "interference": p.overlap.interference,
                    "valid": true,
                });
                emit(common, "profile_check.json", &json(&summary)?)
            }
        },
        Command::Search => {
            let sc = scenario(common)?;
            let profile = resolve_profile(&sc)?;
            let (fwd, bwd) = layer_dags(&sc, &profile)?;
            let opts = SearchOptions {
                barrier_us: sc.options.barrier_us,
                parallel: sc.options.parallel_search,
                seed_segmentations: true,
            };
            let best = search_si_plan(&fwd, &bwd, &LaneCostModel::new(&profile.overlap), &sc.caps, &opts)?;
            let meta = serde_json::json!({
                "scenario": sc.name,
                "fwd_solo_us": fwd.total_duration_us(),
                "bwd_solo_us": bwd.total_duration_us(),
                "caps": sc.caps,
            });
            emit(common, "plan.json", &best.to_json(meta)?)
        }
        Command::Pipeline {
            discipline,
            plan_source,
            m,
            p,
        } => {
            let sched = match (m, p) {
                (Some(m), Some(p)) => {
                    let disc = discipline.unwrap_or(Discipline::WShape);
                    let dur = match disc {
                        Discipline::WShape => BlockDurations::new(0.5, 0.5, 1.0),
                        _ => BlockDurations::unit(),
                    };
                    pipeline::schedule(disc, *m, *p, &dur)?
                }
                (None, None) => scenario_schedule(common, *plan_source, *discipline)?,
                _ => return Err(Error::Config("geometry mode needs both --m and --p".into())),
            };
            write_schedule(common, &sched)
        }
        Command::Memory => {
            let sc = scenario(common)?;
            let cfg = MemoryConfig::from_model(
                &sc.model,
                &sc.parallelism,
                sc.micro_batch_size,
                &sc.memory,
                sc.capacity_bytes(),
            );
            let mut peaks = Vec::new();
            for disc in Discipline::ALL {
                let sched = pipeline::schedule(
                    disc,
                    sc.microbatches,
                    sc.parallelism.pp,
                    &strandweave::memory::reference_durations(disc),
                )?;
                let layout = MemoryLayout::even(disc, sc.model.layers, sc.parallelism.pp)?;
                let tl = simulate_memory(&sched, &layout, &cfg)?;
                if common.out.is_some() {
                    emit(common, &format!("memory_{}.csv", disc.name()), &tl.to_csv()?)?;
                }
                let fit = max_model_size(&sc.model, &sc.parallelism, &cfg, disc, sc.microbatches).ok();
                peaks.push(serde_json::json!({ "summary": tl.summary(&cfg), "max_model": fit }));
            }
            let doc = serde_json::json!({ "scenario": sc.name, "config": cfg, "disciplines": peaks });
            emit(common, "memory_peaks.json", &json(&doc)?)
        }
        Command::Estimate { plan_source } => {
            let sc = scenario(common)?;
            let profile = resolve_profile(&sc)?;
            let sources: Vec<PlanSource> = match plan_source {
                Some(s) => vec![*s],
                None => PlanSource::ALL.to_vec(),
            };
            let rows = sources
                .iter()
                .map(|&s| estimate_iteration_time(&sc, &profile, s))
                .collect::<Result<Vec<_>>>()?;
            emit(common, "estimate.json", &json(&rows)?)
        }
        Command::Compare => {
            let sc = scenario(common)?;
            let profile = resolve_profile(&sc)?;
            let report = compare_report(&sc, &profile)?;
            emit(common, "compare.json", &report.to_json()?)?;
            if common.out.is_some() {
                emit(common, "compare.csv", &report.to_csv()?)?;
            }
            Ok(())
        }
    }
}

fn scenario_schedule(common: &Common, source: PlanSource, discipline: Option<Discipline>) -> Result<PipelineSchedule> {
    let sc = scenario(common)?;
    let profile = resolve_profile(&sc)?;
    let (fwd, bwd) = layer_dags(&sc, &profile)?;
    let disc = discipline.unwrap_or(source.discipline());
    let timing = layer_timing(source, &fwd, &bwd, &profile, &sc)?;
    let per_stage = layers_per_stage(disc, sc.model.layers, sc.parallelism.pp)?;
    let dur = block_durations(&timing, per_stage, sc.options.pp_latency_us);
    pipeline::schedule(disc, sc.microbatches, sc.parallelism.pp, &dur)
}

fn write_schedule(common: &Common, sched: &PipelineSchedule) -> Result<()> {
    let violations = pipeline::validate_schedule(sched);
    let summary = serde_json::json!({
        "discipline": sched.discipline,
        "m": sched.m,
        "p": sched.p,
        "makespan_us": sched.makespan_us(),
        "bubble_ratio": pipeline::bubble_ratio(sched)?,
        "idle_us_per_device": pipeline::idle_per_device(sched)?,
        "pp_transfers": pipeline::pp_comm_volume(sched, 0.0).transfers,
        "violations": violations,
    });
    if common.out.is_some() {
        emit(common, "blocks.csv", &pipeline::blocks_csv(sched)?)?;
        if common.trace {
            emit(common, "trace.json", &pipeline::trace_json(sched)?)?;
        }
    } else if common.trace {
        eprintln!("--trace needs --out; trace not written");
    }
    emit(common, "schedule.json", &json(&summary)?)?;
    if sched.p <= 16 && common.out.is_none() {
        for row in pipeline::render_grid(sched, grid_slot(sched)) {
            eprintln!("{row}");
        }
    }
    Ok(())
}

/// Smallest block duration, so every block spans at least one column.
fn grid_slot(sched: &PipelineSchedule) -> f64 {
    sched
        .blocks
        .iter()
        .map(|b| b.dur_us)
        .fold(f64::INFINITY, f64::min)
        .max(1e-9)
}
