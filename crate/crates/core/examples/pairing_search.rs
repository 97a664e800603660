//! Exact segment alignment on a toy instance, then the full pairing search
//! and the round-robin baseline on a real layer.

use std::path::Path;

use strandweave::config::load_scenario;
use strandweave::cost::LaneCostModel;
use strandweave::estimate::{layer_dags, resolve_profile};
use strandweave::pairing::{brute_force_align, dp_align};
use strandweave::search::{round_robin_plan, search_si_plan, SearchOptions};

fn main() -> strandweave::error::Result<()> {
    let f: [f64; 3] = [4.0, 2.0, 6.0];
    let b: [f64; 2] = [3.0, 5.0];
    // pairing costs the longer segment plus a quarter of the shorter
    let cost = |i: Option<usize>, j: Option<usize>| -> strandweave::error::Result<f64> {
        Ok(match (i, j) {
            (Some(i), Some(j)) => f[i].max(b[j]) + 0.25 * f[i].min(b[j]),
            (Some(i), None) => f[i],
            (None, Some(j)) => b[j],
            (None, None) => 0.0,
        })
    };
    let dp = dp_align(f.len(), b.len(), cost)?;
    let bf = brute_force_align(f.len(), b.len(), cost)?;
    println!("toy: dp {} us, brute force {} us, steps {:?}", dp.total_us, bf.total_us, dp.steps);

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/llama25b_pcie.json");
    let sc = load_scenario(&path)?;
    let profile = resolve_profile(&sc)?;
    let (fwd, bwd) = layer_dags(&sc, &profile)?;
    let model = LaneCostModel::new(&profile.overlap);
    let best = search_si_plan(&fwd, &bwd, &model, &sc.caps, &SearchOptions::default())?;
    let rr = round_robin_plan(&fwd, &bwd, &model, 0.0)?;
    let solo = fwd.total_duration_us() + bwd.total_duration_us();
    println!("layer solo {solo:.0} us");
    println!(
        "searched: {:.0} us, {} steps, hides {:.1}% of communication, {} candidates",
        best.total_us,
        best.steps.len(),
        100.0 * best.hidden_comm_frac,
        best.candidates_evaluated
    );
    println!(
        "round-robin: {:.0} us, hides {:.1}% of communication",
        rr.total_us,
        100.0 * rr.hidden_comm_frac
    );
    Ok(())
}
