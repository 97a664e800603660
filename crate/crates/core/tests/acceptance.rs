//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured values; tolerances are the constants below.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;

use common::*;
use strandweave::comm::cross_time_ratio;
use strandweave::estimate::{compare_report, resolve_profile, PlanSource};
use strandweave::memory::{max_model_size, peaks_by_discipline, simulate_memory, MemoryConfig, MemoryLayout};
use strandweave::pairing::{brute_force_align, dp_align};
use strandweave::pipeline::{
    self, boundary_crossings, fold_layers, idle_slots, pp_comm_volume, validate_schedule, BlockDurations, Discipline,
};
use strandweave::profile::{oef, overlapped_time, Archetype};

const DP_INSTANCES: usize = 200;
const DP_MAX_SEGMENTS: usize = 6;
const DP_TIME_LIMIT: Duration = Duration::from_secs(10);
const OEF_ROUND_TRIP_TOL: f64 = 1e-9;
const OEF_ROUND_TRIPS: usize = 1000;
const MEMORY_W_MIN_SHARE: f64 = 0.95;
const MEMORY_PEAK_RATIO_MAX: f64 = 1.10;
const MAKESPAN_REL_TOL: f64 = 1e-9;
const CROSS_SHARE_TOL_PT: f64 = 1.5;
const SUITE_TIME_LIMIT: Duration = Duration::from_secs(300);

/// Slot that divides every block length in the sweeps: half a 1F1B block.
const SLOT: f64 = 0.5;
const SWEEP_M: std::ops::RangeInclusive<usize> = 1..=16;
const SWEEP_P: std::ops::RangeInclusive<usize> = 1..=8;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, v: &Verdict) {
    println!("criterion {n}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn run(n: usize, check: fn() -> Verdict) {
    let v = check();
    report(n, &v);
    assert!(v.pass, "criterion {n} FAIL: {}", v.detail);
}

/// Reference memory setup: Llama-25B on 48 GB devices, DP 4 x TP 8 x PP 2,
/// eight micro-batches of one sequence.
fn reference() -> (strandweave::config::Scenario, MemoryConfig) {
    let sc = preset_scenario("llama-25B", "a40", "pcie_a40", 8, 2, 8);
    let cfg = MemoryConfig::from_model(
        &sc.model,
        &sc.parallelism,
        sc.micro_batch_size,
        &sc.memory,
        sc.capacity_bytes(),
    );
    (sc, cfg)
}

fn check_dp_exactness() -> Verdict {
    let mut r = rng(2024);
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for case in 0..DP_INSTANCES {
        let nf = r.gen_range(1..=DP_MAX_SEGMENTS);
        let nb = r.gen_range(1..=DP_MAX_SEGMENTS);
        let pair: Vec<Vec<f64>> = (0..nf).map(|_| (0..nb).map(|_| r.gen_range(0.001..100.0)).collect()).collect();
        let fs: Vec<f64> = (0..nf).map(|_| r.gen_range(0.001..100.0)).collect();
        let bs: Vec<f64> = (0..nb).map(|_| r.gen_range(0.001..100.0)).collect();
        let cost = |i: Option<usize>, j: Option<usize>| -> strandweave::error::Result<f64> {
            Ok(match (i, j) {
                (Some(i), Some(j)) => pair[i][j],
                (Some(i), None) => fs[i],
                (None, Some(j)) => bs[j],
                (None, None) => 0.0,
            })
        };
        let dp = dp_align(nf, nb, cost).unwrap().total_us;
        let bf = brute_force_align(nf, nb, cost).unwrap().total_us;
        if dp != bf {
            mismatches.push(format!("case {case}: {dp} vs {bf}"));
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches.is_empty() && took < DP_TIME_LIMIT,
        format!("{} instances, {} mismatches {:?}, {:.2?}", DP_INSTANCES, mismatches.len(), mismatches.first(), took),
    )
}

fn check_oef_algebra() -> Verdict {
    let exact = [oef(10.0, 4.0, 10.0), oef(10.0, 4.0, 14.0), oef(10.0, 4.0, 12.0)].map(|x| x.unwrap());
    let exact_ok = exact == [1.0, 0.0, 0.5];
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..OEF_ROUND_TRIPS {
        let a: f64 = r.gen_range(0.01..1e4);
        let b: f64 = r.gen_range(0.01..1e4);
        let p = r.gen_range(a.max(b)..=a + b);
        let e = oef(a, b, p).unwrap();
        worst = worst.max((overlapped_time(a, b, e).unwrap() - p).abs());
    }
    verdict(
        exact_ok && worst <= OEF_ROUND_TRIP_TOL,
        format!("oef(10,4,{{10,14,12}}) = {exact:?}; worst round-trip error {worst:.2e} over {OEF_ROUND_TRIPS}"),
    )
}

fn check_folding() -> Verdict {
    let l = fold_layers(32, 4).unwrap();
    let g = &l.gpus[0];
    verdict(
        g.front == (0..4) && g.back == (28..32),
        format!("GPU0 holds {:?} and {:?}", g.front, g.back),
    )
}

fn check_w_structure() -> Verdict {
    let (m, p) = (12, 4);
    let s = pipeline::schedule(Discipline::WShape, m, p, &BlockDurations::new(0.5, 0.5, 1.0)).unwrap();
    let violations = validate_schedule(&s);
    let first = s
        .blocks
        .iter()
        .filter(|b| b.fwd_mb.is_some() && b.bwd_mb.is_some())
        .min_by(|a, b| a.start_us.total_cmp(&b.start_us).then(a.device.cmp(&b.device)))
        .expect("fused blocks");
    // 1-based labels: forward micro-batch 5 with backward micro-batch 1
    let first_ok = first.fwd_mb == Some(4) && first.bwd_mb == Some(0);
    let crossings = boundary_crossings(&s);
    let mut bad = Vec::new();
    for mb in 0..m {
        for back in [false, true] {
            for d in 0..p - 1 {
                let n = crossings.get(&(mb, back, d)).copied().unwrap_or(0);
                if n != 2 {
                    bad.push((mb, back, d, n));
                }
            }
        }
    }
    verdict(
        violations.is_empty() && first_ok && bad.is_empty(),
        format!(
            "{} violations; first fused block {} on device {} at {}; {} boundary counts differ from 2 {:?}",
            violations.len(),
            first.label(),
            first.device,
            first.start_us,
            bad.len(),
            bad.first()
        ),
    )
}

fn check_pp_doubling() -> Verdict {
    let mut bad = Vec::new();
    let mut checked = 0;
    for m in SWEEP_M {
        for p in SWEEP_P {
            let w = pipeline::schedule(Discipline::WShape, m, p, &BlockDurations::new(0.5, 0.5, 1.0)).unwrap();
            let o = pipeline::schedule(Discipline::OneFOneB, m, p, &BlockDurations::unit()).unwrap();
            let (vw, vo) = (pp_comm_volume(&w, 1.0).bytes, pp_comm_volume(&o, 1.0).bytes);
            // one stage has no boundary: both volumes are zero
            let ok = if p == 1 { vw == 0.0 && vo == 0.0 } else { vw / vo == 2.0 };
            checked += 1;
            if !ok {
                bad.push((m, p, vw, vo));
            }
        }
    }
    verdict(
        bad.is_empty(),
        format!("{checked} geometries, ratio 2.0 for p >= 2 and no traffic at p = 1; {} off {:?}", bad.len(), bad.first()),
    )
}

fn check_bubble_parity() -> Verdict {
    // a folded block holds half the layers, so F and B take half as long and
    // the fused block takes F + B
    let w_dur = BlockDurations::new(0.5, 0.5, 1.0);
    let one_dur = BlockDurations::unit();
    let mut bad = Vec::new();
    let mut checked = 0;
    for m in SWEEP_M {
        for p in SWEEP_P {
            let w = pipeline::schedule(Discipline::WShape, m, p, &w_dur).unwrap();
            let o = pipeline::schedule(Discipline::OneFOneB, m, p, &one_dur).unwrap();
            let (iw, io) = (idle_slots(&w, SLOT).unwrap(), idle_slots(&o, SLOT).unwrap());
            checked += 1;
            if iw != io {
                bad.push((m, p, iw, io));
            }
        }
    }
    let only_short = bad.iter().all(|&(m, p, ..)| m <= p);
    let less_idle = bad.iter().all(|(_, _, iw, io)| iw.iter().zip(io).all(|(w, o)| w <= o));
    verdict(
        bad.is_empty(),
        format!(
            "{checked} geometries, {} with unequal idle slots, first {:?}; all of them m <= p: {only_short}; \
             folded idles less in each: {less_idle}",
            bad.len(),
            bad.first()
        ),
    )
}

fn check_memory_ordering() -> Verdict {
    let (sc, cfg) = reference();
    let fit = |d| max_model_size(&sc.model, &sc.parallelism, &cfg, d, sc.microbatches).unwrap();
    let (w, one, bi) = (fit(Discipline::WShape), fit(Discipline::OneFOneB), fit(Discipline::Bidirectional));
    let share = w.layers as f64 / one.layers as f64;
    verdict(
        bi.layers < w.layers && w.layers <= one.layers && share >= MEMORY_W_MIN_SHARE,
        format!(
            "layers bidirectional {} ({:.1}B) < w_shape {} ({:.1}B) <= 1f1b {} ({:.1}B); share {share:.3} >= {MEMORY_W_MIN_SHARE}",
            bi.layers,
            bi.param_count / 1e9,
            w.layers,
            w.param_count / 1e9,
            one.layers,
            one.param_count / 1e9
        ),
    )
}

fn check_memory_conservation() -> Verdict {
    let (sc, cfg) = reference();
    let mut timelines = 0;
    let mut leaks = Vec::new();
    for disc in Discipline::ALL {
        for m in SWEEP_M {
            for p in SWEEP_P {
                let s = pipeline::schedule(disc, m, p, &strandweave::memory::reference_durations(disc)).unwrap();
                for per_stage in [1, 3] {
                    let layout = MemoryLayout::even(disc, per_stage * disc.stages(p), p).unwrap();
                    let tl = simulate_memory(&s, &layout, &cfg).unwrap();
                    timelines += 1;
                    for d in &tl.devices {
                        if d.final_bytes() != d.baseline_bytes {
                            leaks.push((disc.name(), m, p, d.device));
                        }
                    }
                }
            }
        }
    }
    let peaks = peaks_by_discipline(sc.model.layers, sc.parallelism.pp, sc.microbatches, &cfg).unwrap();
    let ratio = peaks["w_shape"] as f64 / peaks["one_f_one_b"] as f64;
    verdict(
        leaks.is_empty() && ratio <= MEMORY_PEAK_RATIO_MAX,
        format!(
            "{timelines} timelines, {} end off baseline {:?}; peak w_shape/1f1b = {ratio:.4} <= {MEMORY_PEAK_RATIO_MAX}",
            leaks.len(),
            leaks.first()
        ),
    )
}

fn check_dominance() -> Verdict {
    let mut bad = Vec::new();
    let mut combos = 0;
    let mut hidden = Vec::new();
    for arch in Archetype::ALL {
        for model in dense_presets() {
            let sc = preset_scenario(&model, arch.cluster(), arch.name(), 8, 2, 8);
            let profile = resolve_profile(&sc).unwrap();
            let r = compare_report(&sc, &profile).unwrap();
            let row = |s: PlanSource| r.row(s).unwrap();
            let (si, rr, mb) = (
                row(PlanSource::StrandInterleave),
                row(PlanSource::WaveletRr),
                row(PlanSource::MegatronBaseline),
            );
            combos += 1;
            let le = |a: f64, b: f64| a <= b * (1.0 + MAKESPAN_REL_TOL);
            if !(le(si.makespan_us, rr.makespan_us) && le(rr.makespan_us, mb.makespan_us)) {
                bad.push(format!(
                    "{model}@{}: {:.0} / {:.0} / {:.0}",
                    arch.name(),
                    si.makespan_us,
                    rr.makespan_us,
                    mb.makespan_us
                ));
            }
            if arch == Archetype::PcieA40 {
                hidden.push((model.clone(), si.hidden_comm_frac, rr.hidden_comm_frac));
            }
        }
    }
    let hidden_ok = hidden.iter().all(|(_, si, rr)| si > rr);
    let spread = hidden
        .iter()
        .map(|(m, si, rr)| format!("{m} {:.1}%/{:.1}%", 100.0 * si, 100.0 * rr))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        bad.is_empty() && hidden_ok,
        format!(
            "{combos} archetype x model pairs, {} out of order {:?}; pcie_a40 hidden strand_interleave/wavelet_rr: {spread}",
            bad.len(),
            bad.first()
        ),
    )
}

fn check_cross_time_shares() -> Verdict {
    let pairs = [(0.98, 0.17), (0.3, 0.15), (7.84, 7.52)];
    let expected = [14.8, 33.3, 48.9];
    // shares quoted next to the time pairs, rounded as quoted
    let reported = [14.8, 33.0, 49.9];
    let got: Vec<f64> = pairs.iter().map(|&(l, c)| 100.0 * cross_time_ratio(l, c)).collect();
    let ok = got
        .iter()
        .zip(expected.iter().zip(reported.iter()))
        .all(|(g, (e, p))| (g - e).abs() <= CROSS_SHARE_TOL_PT && (g - p).abs() <= CROSS_SHARE_TOL_PT);
    verdict(
        ok,
        format!(
            "ratios {:.2}% {:.2}% {:.2}% vs expected {expected:?} and reported {reported:?} within {CROSS_SHARE_TOL_PT} pt",
            got[0], got[1], got[2]
        ),
    )
}

fn check_determinism() -> Verdict {
    let scenario = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/llama25b_pcie.json");
    let sc = strandweave::config::load_scenario(&scenario).unwrap();
    assert!(sc.options.parallel_search, "reference scenario runs the parallel search");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let st = std::process::Command::new(env!("CARGO_BIN_EXE_strandweave"))
            .args(["compare", "--scenario", scenario.to_str().unwrap(), "--out", d.path().to_str().unwrap()])
            .status()
            .unwrap();
        assert!(st.success());
    }
    let same = |f: &str| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap();
    let files_ok = same("compare.json") && same("compare.csv");

    // the serial search must land on the same rows
    let profile = resolve_profile(&sc).unwrap();
    let par = compare_report(&sc, &profile).unwrap();
    let mut serial_sc = sc.clone();
    serial_sc.options.parallel_search = false;
    let ser = compare_report(&serial_sc, &profile).unwrap();
    let rows_ok = serde_json::to_string(&par.rows).unwrap() == serde_json::to_string(&ser.rows).unwrap();
    verdict(
        files_ok && rows_ok,
        format!("two CLI runs byte-identical: {files_ok}; parallel rows equal serial rows: {rows_ok}"),
    )
}

/// Exact segment alignment equals exhaustive alignment on 200 random
/// instances of up to six segments per strand, within ten seconds.
#[test]
fn criterion_01_dp_exactness() {
    run(1, check_dp_exactness);
}

/// OEF of a 10 us / 4 us pair at 10, 14 and 12 us, and round trips
/// through the overlapped time.
#[test]
fn criterion_02_oef_algebra() {
    run(2, check_oef_algebra);
}

/// 32 layers over 4 stages: the first GPU holds both ends of the model.
#[test]
fn criterion_03_folding() {
    run(3, check_folding);
}

/// W schedule at m = 12, p = 4: valid, first fused block pairs forward
/// micro-batch 5 with backward micro-batch 1, two crossings per boundary
/// per direction.
#[test]
fn criterion_04_w_structure() {
    run(4, check_w_structure);
}

/// Folding doubles send/recv volume across the whole sweep.
#[test]
fn criterion_05_pp_doubling() {
    run(5, check_pp_doubling);
}

/// Per-device idle slots of the folded schedule equal those of 1F1B when
/// the fused block lasts F + B.
#[test]
fn criterion_06_bubble_parity() {
    run(6, check_bubble_parity);
}

/// Largest model that fits: bidirectional < folded <= 1F1B, folded within
/// 5% of 1F1B.
#[test]
fn criterion_07_memory_ordering() {
    run(7, check_memory_ordering);
}

/// Timelines end at their baseline; the folded peak stays within 10% of
/// 1F1B on the reference model.
#[test]
fn criterion_08_memory_conservation() {
    run(8, check_memory_conservation);
}

/// Searched pairing beats round-robin beats no interleaving on every
/// archetype and dense preset, and hides more communication on PCIe.
#[test]
fn criterion_09_dominance() {
    run(9, check_dominance);
}

/// Cross-node time share from measured local/cross time pairs.
#[test]
fn criterion_10_cross_time_shares() {
    run(10, check_cross_time_shares);
}

/// Repeated `compare` runs write identical bytes with parallel search on.
#[test]
fn criterion_11_determinism() {
    run(11, check_determinism);
}

/// All checks above, run back to back, finish within five minutes. The
/// verdicts of the individual checks are reported by their own tests.
#[test]
fn criterion_12_suite_runtime() {
    let checks: [fn() -> Verdict; 11] = [
        check_dp_exactness,
        check_oef_algebra,
        check_folding,
        check_w_structure,
        check_pp_doubling,
        check_bubble_parity,
        check_memory_ordering,
        check_memory_conservation,
        check_dominance,
        check_cross_time_shares,
        check_determinism,
    ];
    let start = Instant::now();
    let mut timings = Vec::new();
    for (i, c) in checks.iter().enumerate() {
        let t = Instant::now();
        let _ = c();
        timings.push(format!("{}:{:.1?}", i + 1, t.elapsed()));
    }
    let took = start.elapsed();
    let v = verdict(
        took < SUITE_TIME_LIMIT,
        format!("{took:.1?} for all checks ({}), limit {SUITE_TIME_LIMIT:?}", timings.join(" ")),
    );
    report(12, &v);
    assert!(v.pass, "criterion 12 FAIL: {}", v.detail);
}
