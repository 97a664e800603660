//! Overlap effectiveness of operator pairs and the cost of co-running two
//! short operator chains on the lane model.

use strandweave::cost::segment_pair_cost;
use strandweave::ops::{OpNode, OperatorClass, Pass};
use strandweave::profile::{oef, overlapped_time, Interference, OverlapTable};

fn main() -> strandweave::error::Result<()> {
    // a 10 us and a 4 us operator: fully hidden, not hidden, half hidden
    for p in [10.0, 14.0, 12.0] {
        println!("oef(10, 4, {p}) = {}", oef(10.0, 4.0, p)?);
    }
    println!("overlapped_time(10, 4, 0.5) = {}", overlapped_time(10.0, 4.0, 0.5)?);

    // every pair hides 30% unless set below
    let mut tbl = OverlapTable::uniform(0.3, Interference::default());
    tbl.set(OperatorClass::Gemm, OperatorClass::AllGather, 0.8)?;
    tbl.set(OperatorClass::Gemm, OperatorClass::ReduceScatter, 0.8)?;
    tbl.set(OperatorClass::FlashAttention, OperatorClass::AllGather, 0.6)?;

    let fwd = [
        OpNode::new(0, OperatorClass::AllGather, Pass::Forward, 30.0),
        OpNode::new(1, OperatorClass::FlashAttention, Pass::Forward, 80.0),
    ];
    let bwd = [
        OpNode::new(100, OperatorClass::Gemm, Pass::Backward, 60.0),
        OpNode::new(101, OperatorClass::ReduceScatter, Pass::Backward, 25.0),
    ];
    let f: Vec<&OpNode> = fwd.iter().collect();
    let b: Vec<&OpNode> = bwd.iter().collect();
    let c = segment_pair_cost(&f, &b, &tbl)?;
    let solo: f64 = fwd.iter().chain(bwd.iter()).map(|o| o.duration_us).sum();
    println!("solo sum {solo:.1} us, co-run {:.1} us, lanes busy {:?}", c.p_us, c.lane_busy_us);
    Ok(())
}
