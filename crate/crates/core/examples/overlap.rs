//! Virtual makespan of the same training run with and without
//! communication overlapping backward compute.

use relaxcomm::algorithms::Allreduce;
use relaxcomm::collectives::Communicator;
use relaxcomm::engine::{Engine, EngineOptions, LayerCost};
use relaxcomm::harness::{generate, partition, DataKind, Model, ModelSpec};
use relaxcomm::transport::{NetworkProfile, SimCluster, Transport};
use relaxcomm::Result;

fn makespan(overlap: bool) -> Result<f64> {
    let n = 4;
    let model = Model::new(ModelSpec::Quadratic { d: 4000, layers: Some(4) })?;
    let data = generate(DataKind::Quadratic, 64, 4000, 1)?;
    let shards = partition(data.len(), n)?;
    let options = EngineOptions {
        overlap,
        fusion: false,
        ..EngineOptions::default()
    };
    let costs = vec![LayerCost { forward: 1e-3, backward: 2e-3 }; 4];
    let cluster = SimCluster::flat(n, NetworkProfile::uniform(1e-3, 1e9))?;
    let ends = cluster.run(|ep| {
        let rows: Vec<usize> = shards[ep.rank()].clone().collect();
        let mut e = Engine::new(Communicator::new(ep), model.init(0), Box::new(Allreduce::new(0.1)))?
            .with_costs(costs.clone())?
            .with_options(options)?;
        for _ in 0..10 {
            e.step(&|p: &[&[f32]]| model.gradient(p, &data, &rows))?;
        }
        Ok(e.now())
    })?;
    Ok(ends.into_iter().fold(0.0, f64::max))
}

/// `(serial, overlapped)` virtual seconds for ten iterations.
pub fn run() -> Result<(f64, f64)> {
    Ok((makespan(false)?, makespan(true)?))
}

pub fn main() -> Result<()> {
    let (serial, overlapped) = run()?;
    println!("serial {serial:.4} s, overlapped {overlapped:.4} s ({:.0}%)", 100.0 * overlapped / serial);
    Ok(())
}
