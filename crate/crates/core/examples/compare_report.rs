//! Iteration estimates of every plan source for each bundled scenario.

use std::path::Path;

use strandweave::config::load_scenario;
use strandweave::estimate::{compare_report, resolve_profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    for path in files {
        let sc = load_scenario(&path)?;
        let report = compare_report(&sc, &resolve_profile(&sc)?)?;
        println!("{} ({})", report.scenario, &report.config_hash[..12]);
        for r in &report.rows {
            println!(
                "  {:<18} {:>10.1} ms  x{:.3}  hidden {:>5.1}%  bubble {:.3}  mfu {:.3}  peak {:.1} GB",
                r.plan_source.name(),
                r.makespan_us / 1e3,
                r.speedup,
                100.0 * r.hidden_comm_frac,
                r.bubble_ratio,
                r.mfu,
                r.peak_memory_bytes as f64 / 1e9
            );
        }
    }
    Ok(())
}
