//! Builds the per-layer operator graphs of a scenario and lists a few of
//! their valid execution orders.

use std::path::Path;

use strandweave::config::load_scenario;
use strandweave::estimate::{layer_dags, resolve_profile};
use strandweave::ops::validate_sequence;

fn main() -> strandweave::error::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/llama25b_pcie.json");
    let sc = load_scenario(&path)?;
    let profile = resolve_profile(&sc)?;
    let (fwd, bwd) = layer_dags(&sc, &profile)?;
    for dag in [&fwd, &bwd] {
        println!(
            "{:?}: {} operators, {} edges, {:.1} us solo, {:.1} us communication",
            dag.pass,
            dag.len(),
            dag.edges.len(),
            dag.total_duration_us(),
            dag.communication_nodes().map(|o| o.duration_us).sum::<f64>()
        );
        for order in dag.topological_orders(3)? {
            assert!(validate_sequence(dag, &order));
            let names: Vec<String> = dag
                .resolve(&order)
                .expect("order of this graph")
                .iter()
                .map(|o| o.class.name().to_string())
                .collect();
            println!("  {}", names.join(" "));
        }
    }
    Ok(())
}
