//! All eight overlap, fusion and hierarchical settings of one run.

use relaxcomm::runner::{ablate, write_ablation_csv, AblationRow, ExperimentConfig};
use relaxcomm::Result;

const CONFIG: &str = r#"
seed = 5
epochs = 2
[algorithm]
name = "decen32"
lr = 0.3
[model]
kind = "mlp"
d = 32
hidden = 64
[data]
n_samples = 640
batch_size = 20
[cluster]
n_workers = 8
nodes = 2
"#;

pub fn run() -> Result<Vec<AblationRow>> {
    Ok(ablate(&ExperimentConfig::from_toml(CONFIG)?)?.into_iter().map(|(row, _)| row).collect())
}

pub fn main() -> Result<()> {
    write_ablation_csv(&run()?, &mut std::io::stdout())
}
