//! Epoch time of full-precision and 8-bit allreduce as bandwidth drops.

use relaxcomm::runner::{parse_axes, sweep, write_sweep_csv, ExperimentConfig, SweepRow};
use relaxcomm::Result;

const CONFIG: &str = r#"
seed = 1
epochs = 1
[algorithm]
name = "allreduce"
lr = 0.3
[model]
kind = "mlp"
d = 64
hidden = 128
[data]
n_samples = 1000
batch_size = 25
[cluster]
n_workers = 8
nodes = 2
"#;

pub fn run() -> Result<Vec<SweepRow>> {
    let axes = parse_axes(&["bandwidth=1e8,1e9,1e10".into(), "algorithm=allreduce,qsgd8".into()])?;
    sweep(&[ExperimentConfig::from_toml(CONFIG)?], &axes)
}

pub fn main() -> Result<()> {
    write_sweep_csv(&run()?, &mut std::io::stdout())
}
