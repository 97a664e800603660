//! Memory timelines of the three disciplines and the largest model each
//! fits on the reference 48 GB configuration.

use std::path::Path;

use strandweave::config::load_scenario;
use strandweave::memory::{max_model_size, peaks_by_discipline, MemoryConfig};
use strandweave::pipeline::Discipline;

fn main() -> strandweave::error::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/llama25b_pcie.json");
    let sc = load_scenario(&path)?;
    let cfg = MemoryConfig::from_model(
        &sc.model,
        &sc.parallelism,
        sc.micro_batch_size,
        &sc.memory,
        sc.capacity_bytes(),
    );
    let gb = |b: u64| b as f64 / 1e9;
    println!(
        "per layer: activations {:.3} GB per micro-batch, states {:.3} GB; capacity {:.1} GB",
        gb(cfg.act_bytes_per_layer),
        gb(cfg.state_bytes_per_layer),
        gb(cfg.capacity_bytes)
    );
    let peaks = peaks_by_discipline(sc.model.layers, sc.parallelism.pp, sc.microbatches, &cfg)?;
    for (name, peak) in &peaks {
        println!("{} layers, {name}: peak {:.2} GB", sc.model.layers, gb(*peak));
    }
    for disc in Discipline::ALL {
        let fit = max_model_size(&sc.model, &sc.parallelism, &cfg, disc, sc.microbatches)?;
        println!(
            "{:>14}: fits {} layers ({:.1}B parameters), peak {:.2} GB",
            disc.name(),
            fit.layers,
            fit.param_count / 1e9,
            gb(fit.peak_bytes)
        );
    }
    Ok(())
}
