#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaxcomm::collectives::Communicator;
use relaxcomm::runner::ExperimentConfig;
use relaxcomm::transport::{ClusterLayout, NetworkProfile, SimCluster};
use relaxcomm::Result;

pub fn random_vectors(n: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(-100.0f32..100.0)).collect())
        .collect()
}

/// Left fold in rank order, the reference every sum primitive must match.
pub fn sequential_sum(vectors: &[Vec<f32>]) -> Vec<f32> {
    let mut acc = vectors[0].clone();
    for v in &vectors[1..] {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc
}

pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Runs `f` on every worker of a simulated cluster with `nodes` nodes.
pub fn on_cluster<R: Send>(
    n: usize,
    nodes: usize,
    f: impl Fn(Communicator) -> Result<R> + Sync,
) -> Vec<R> {
    let layout = ClusterLayout::contiguous(n, nodes).unwrap();
    let cluster = SimCluster::new(layout, NetworkProfile::uniform(1e-6, 1e9)).unwrap();
    cluster.run(|ep| f(Communicator::new(ep))).unwrap()
}

pub fn config(body: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(body).unwrap()
}

/// The desk-scale logistic workload: d=20, N=2000, 8 workers, 30 epochs.
pub fn logistic_workload(algorithm: &str) -> ExperimentConfig {
    config(&format!(
        r#"
seed = 1
epochs = 30
[algorithm]
{algorithm}
[model]
kind = "logistic"
d = 20
[data]
n_samples = 2000
batch_size = 25
[cluster]
n_workers = 8
nodes = 2
"#
    ))
}

/// Mean logistic loss in f64, written independently of the library model.
pub fn logistic_loss(w: &[f64], b: f64, x: &[f32], y: &[f32], d: usize) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let z: f64 = w.iter().zip(&x[i * d..(i + 1) * d]).map(|(a, &b)| a * b as f64).sum::<f64>() + b;
            let m = -(y[i] as f64) * z;
            if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            }
        })
        .sum::<f64>()
        / n as f64
}

/// Gradient of [`logistic_loss`] over `rows`.
pub fn logistic_grad(w: &[f64], b: f64, x: &[f32], y: &[f32], d: usize, rows: &[usize]) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    for &i in rows {
        let xi = &x[i * d..(i + 1) * d];
        let yi = y[i] as f64;
        let z: f64 = w.iter().zip(xi).map(|(a, &b)| a * b as f64).sum::<f64>() + b;
        let s = -yi / (1.0 + (yi * z).exp());
        for (g, &xj) in gw.iter_mut().zip(xi) {
            *g += s * xj as f64;
        }
        gb += s;
    }
    let m = rows.len() as f64;
    (gw.iter().map(|g| g / m).collect(), gb / m)
}
