//! Synthesizes each archetype profile, writes it to disk and reads it back.

use strandweave::profile::{load_profile, save_profile, synth_profile, Archetype};
use strandweave::ops::OperatorClass;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    for arch in Archetype::ALL {
        let profile = synth_profile(arch);
        let path = dir.path().join(format!("profile_{}.json", arch.name()));
        save_profile(&profile, &path)?;
        let back = load_profile(&path)?;
        assert_eq!(back, profile);
        println!(
            "{:<12} {} pairs, GEMM|AllGather {:.2}, AllGather|AllToAll {:.2}, interference {:?}",
            arch.name(),
            back.overlap.len(),
            back.overlap.lookup(OperatorClass::Gemm, OperatorClass::AllGather)?,
            back.overlap.lookup(OperatorClass::AllGather, OperatorClass::AllToAll)?,
            back.overlap.interference
        );
    }
    Ok(())
}
