//! The same decentralized run over the simulator and over localhost TCP.

use relaxcomm::runner::{run_experiment, ExperimentConfig};
use relaxcomm::transport::Backend;
use relaxcomm::Result;

const CONFIG: &str = r#"
seed = 2
epochs = 2
[algorithm]
name = "decen8"
lr = 0.3
topology = "ring"
[model]
kind = "logistic"
d = 10
[data]
n_samples = 400
batch_size = 10
[cluster]
n_workers = 4
"#;

/// Whether both backends end with bitwise equal parameters on every rank.
pub fn run() -> Result<bool> {
    let sim = ExperimentConfig::from_toml(CONFIG)?;
    let mut tcp = sim.clone();
    tcp.cluster.backend = Backend::Tcp;
    let a = run_experiment(&sim)?;
    let b = run_experiment(&tcp)?;
    Ok(a.final_params.iter().zip(&b.final_params).all(|(x, y)| {
        x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits()))
    }))
}

pub fn main() -> Result<()> {
    println!("sim and tcp parameters identical: {}", run()?);
    Ok(())
}
