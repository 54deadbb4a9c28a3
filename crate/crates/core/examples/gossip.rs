//! Ring gossip averaging: replicas converge to their mean.

use relaxcomm::collectives::{Communicator, Mode, Topology};
use relaxcomm::harness::replica_spread;
use relaxcomm::transport::{NetworkProfile, SimCluster};
use relaxcomm::Result;

/// Replica spread after every round, starting from round 0.
pub fn run(rounds: u64) -> Result<Vec<f64>> {
    let n = 8;
    let topo = Topology::ring(n);
    let cluster = SimCluster::flat(n, NetworkProfile::default())?;
    let history = cluster.run(|ep| {
        let comm = Communicator::new(ep);
        let mut x = vec![comm.rank() as f32; 4];
        let mut h = vec![x.clone()];
        for r in 0..rounds {
            comm.d_fp_s(0, &mut x, &topo, r, Mode::Average)?;
            h.push(x.clone());
        }
        Ok(h)
    })?;
    Ok((0..=rounds as usize)
        .map(|r| replica_spread(&history.iter().map(|h| h[r].clone()).collect::<Vec<_>>()))
        .collect())
}

pub fn main() -> Result<()> {
    for (r, s) in run(30)?.iter().enumerate().step_by(5) {
        println!("round {r:>2}: spread {s:.3e}");
    }
    Ok(())
}
