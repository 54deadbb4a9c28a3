//! Synchronous allreduce against asynchronous training when one worker
//! computes twice as slowly.

use relaxcomm::runner::{run_experiment, ExperimentConfig};
use relaxcomm::Result;

const CONFIG: &str = r#"
seed = 3
epochs = 2
[algorithm]
name = "allreduce"
lr = 0.3
[model]
kind = "mlp"
d = 16
hidden = 32
[data]
n_samples = 800
batch_size = 20
[cluster]
n_workers = 4
"#;

/// `(algorithm, epoch virtual time, final loss)` for allreduce and async.
pub fn run() -> Result<Vec<(String, f64, f64)>> {
    ["name = \"allreduce\"\nlr = 0.3", "name = \"async\"\nlr = 0.3"]
        .iter()
        .map(|algo| {
            let mut cfg = ExperimentConfig::from_toml(CONFIG)?;
            cfg.algorithm = toml::from_str(algo).expect("valid algorithm");
            cfg.cluster.network = cfg.cluster.network.with_straggler(3, 2.0);
            let s = run_experiment(&cfg)?.summary;
            Ok((s.algorithm, s.epoch_virtual_time.unwrap_or(f64::NAN), s.final_loss))
        })
        .collect()
}

pub fn main() -> Result<()> {
    for (name, time, loss) in run()? {
        println!("{name:<10} epoch {time:.4} s, loss {loss:.4}");
    }
    Ok(())
}
