//! Cross-node share of communication time, from measured time pairs and
//! from the analytic volume model.

use strandweave::comm::{comm_volume_estimate, cross_time_ratio};
use strandweave::config::{cluster_preset, model_preset, ParallelismSpec};

fn main() -> strandweave::error::Result<()> {
    // (local, cross) seconds measured for three parallel layouts of a 405B model
    for (local, cross) in [(0.98, 0.17), (0.3, 0.15), (7.84, 7.52)] {
        println!("local {local:>5} s, cross {cross:>5} s -> {:.1}% cross", 100.0 * cross_time_ratio(local, cross));
    }

    let model = model_preset("llama-25B")?;
    let cluster = cluster_preset("a40")?;
    for par in [ParallelismSpec::new(4, 8, 2, 1, 1), ParallelismSpec::new(2, 8, 2, 2, 1)] {
        let v = comm_volume_estimate(&model, &cluster, &par, 1, 8, 0.5)?;
        println!(
            "\ndp{} tp{} pp{} cp{}: local {:.2} GB / {:.3} s, cross {:.2} GB / {:.3} s, cross share {:.1}%",
            par.dp,
            par.tp,
            par.pp,
            par.cp,
            v.local_bytes / 1e9,
            v.local_us / 1e6,
            v.cross_bytes / 1e9,
            v.cross_us / 1e6,
            100.0 * v.cross_time_ratio
        );
        for c in &v.breakdown {
            let side = if c.cross_node { "cross" } else { "local" };
            println!("  {:<16} group {:>2} {side}: {:.2} GB", c.name, c.group, c.bytes / 1e9);
        }
    }
    Ok(())
}
