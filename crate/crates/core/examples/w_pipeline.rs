//! Folded layer placement and the W-shaped schedule next to 1F1B: grids,
//! idle time and pipeline transfer counts.

use strandweave::pipeline::{
    self, bubble_ratio, fold_layers, idle_per_device, pp_comm_volume, render_grid, validate_schedule, BlockDurations,
    Discipline,
};

fn main() -> strandweave::error::Result<()> {
    let layout = fold_layers(32, 4)?;
    for (k, g) in layout.gpus.iter().enumerate() {
        println!("GPU{k}: layers {:?} and {:?}", g.front, g.back);
    }

    let (m, p) = (12, 4);
    // a W block holds half the layers of a 1F1B block
    let w = pipeline::schedule(Discipline::WShape, m, p, &BlockDurations::new(0.5, 0.5, 1.0))?;
    let one = pipeline::schedule(Discipline::OneFOneB, m, p, &BlockDurations::unit())?;
    for s in [&w, &one] {
        assert!(validate_schedule(s).is_empty());
        println!(
            "\n{} m={m} p={p}: makespan {}, bubble {:.3}, idle {:?}, transfers {}",
            s.discipline.name(),
            s.makespan_us(),
            bubble_ratio(s)?,
            idle_per_device(s)?,
            pp_comm_volume(s, 0.0).transfers
        );
        for row in render_grid(s, 0.5) {
            println!("{row}");
        }
    }
    let first_si = w
        .device_blocks(p - 1)
        .into_iter()
        .find(|b| b.fwd_mb.is_some() && b.bwd_mb.is_some())
        .expect("fused blocks exist for m > p");
    println!("\nfirst fused block on the last device: {}", first_si.label());
    Ok(())
}
