//! Centralized sums on a simulated two-node cluster: full precision,
//! 8-bit with error compensation, and the hierarchical variant.

use relaxcomm::codec::{Codec, Rounding};
use relaxcomm::collectives::Communicator;
use relaxcomm::transport::{ClusterLayout, NetworkProfile, SimCluster};
use relaxcomm::Result;

/// Returns the exact sum and its 8-bit approximation seen by rank 0.
pub fn run() -> Result<(Vec<f32>, Vec<f32>)> {
    let cluster = SimCluster::new(ClusterLayout::contiguous(4, 2)?, NetworkProfile::default())?;
    let out = cluster.run(|ep| {
        let comm = Communicator::new(ep);
        let r = comm.rank() as f32;
        let x: Vec<f32> = (0..8).map(|i| r + i as f32 * 0.25).collect();

        let mut exact = x.clone();
        comm.c_fp_s(0, &mut exact)?;

        let codec = Codec::uniform8(Rounding::Nearest);
        let mut q = codec.quantizer(comm.rank());
        let mut state = comm.error_state(x.len());
        let mut approx = x.clone();
        comm.c_lp_s(1, &mut approx, &mut q, Some(&mut state))?;

        let tree = comm.clone().with_hierarchical(true);
        let mut nested = x.clone();
        tree.c_fp_s(2, &mut nested)?;
        assert_eq!(nested, exact);
        Ok((exact, approx))
    })?;
    Ok(out.into_iter().next().expect("rank 0"))
}

pub fn main() -> Result<()> {
    let (exact, approx) = run()?;
    println!("full precision: {exact:?}");
    println!("8-bit + EC:     {approx:?}");
    Ok(())
}
