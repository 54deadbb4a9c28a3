//! Synthetic datasets, sharding and per-worker batch streams.
//!
//! Binary dump format, little-endian:
//!
//! ```text
//! [n: u64][d: u64][seed: u64] then n rows of [feature: f32; d][label: f32]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::collectives::partition_range;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// Labels `+-1` from a random separator through the origin, each flipped
    /// with probability `noise`.
    Logistic { noise: f64 },
    /// Target points scattered with unit variance around a random centre.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    seed: u64,
    features: Vec<f32>,
    labels: Vec<f32>,
}

impl Dataset {
    pub fn from_rows(d: usize, features: Vec<f32>, labels: Vec<f32>, seed: u64) -> Result<Self> {
        let n = labels.len();
        if n == 0 || d == 0 {
            return Err(Error::InvalidSize("dataset needs n > 0 and d > 0".into()));
        }
        if features.len() != n * d {
            return Err(Error::ShapeMismatch {
                shape: vec![n, d],
                len: features.len(),
            });
        }
        Ok(Self {
            n,
            d,
            seed,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> f32 {
        self.labels[i]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for v in [self.n as u64, self.d as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.n {
            for v in self.row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&self.labels[i].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 3];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [n, d, seed] = header;
        let (n, d) = (n as usize, d as usize);
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            for _ in 0..d {
                r.read_exact(&mut buf)?;
                features.push(f32::from_le_bytes(buf));
            }
            r.read_exact(&mut buf)?;
            labels.push(f32::from_le_bytes(buf));
        }
        Self::from_rows(d, features, labels, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Deterministic synthetic dataset of `n` rows in `d` dimensions.
pub fn generate(kind: DataKind, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidSize(format!("cannot generate {n} x {d} dataset")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f32 { StandardNormal.sample(&mut rng) };
    let centre: Vec<f32> = (0..d).map(|_| normal()).collect();
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &c in &centre {
            let z = normal();
            features.push(match kind {
                DataKind::Logistic { .. } => z,
                DataKind::Quadratic => c + z,
            });
        }
    }
    let labels = match kind {
        DataKind::Quadratic => vec![0.0; n],
        DataKind::Logistic { noise } => {
            if !(0.0..=1.0).contains(&noise) {
                return Err(Error::InvalidSize(format!("label noise {noise} outside [0, 1]")));
            }
            let mut flip = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F11F);
            (0..n)
                .map(|i| {
                    let z: f64 = features[i * d..(i + 1) * d]
                        .iter()
                        .zip(&centre)
                        .map(|(&x, &w)| x as f64 * w as f64)
                        .sum();
                    let y = if z >= 0.0 { 1.0 } else { -1.0 };
                    if flip.random_bool(noise) {
                        -y
                    } else {
                        y
                    }
                })
                .collect()
        }
    };
    Dataset::from_rows(d, features, labels, seed)
}

/// Contiguous shards of `n_samples` rows for `workers` workers; sizes
/// differ by at most one, larger shards first.
pub fn partition(n_samples: usize, workers: usize) -> Result<Vec<Range<usize>>> {
    if workers == 0 || workers > n_samples {
        return Err(Error::InvalidSize(format!(
            "cannot split {n_samples} rows across {workers} workers"
        )));
    }
    Ok((0..workers)
        .map(|k| partition_range(n_samples, workers, k))
        .collect())
}

/// Per-worker batch stream. Each epoch walks a fresh seeded permutation of
/// the shard; batches past its end wrap around so every worker takes the
/// same number of steps per epoch.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    shard: Range<usize>,
    batch: Option<usize>,
    steps_per_epoch: u64,
    seed: u64,
}

impl BatchSchedule {
    /// `batch = None` uses the whole shard, in order, every step.
    pub fn new(shards: &[Range<usize>], worker: usize, batch: Option<usize>, seed: u64) -> Result<Self> {
        if batch == Some(0) {
            return Err(Error::config("data.batch_size", "must be at least 1"));
        }
        let largest = shards.iter().map(Range::len).max().unwrap_or(0);
        let steps_per_epoch = match batch {
            None => 1,
            Some(b) => largest.div_ceil(b) as u64,
        };
        Ok(Self {
            shard: shards[worker].clone(),
            batch,
            steps_per_epoch,
            seed: seed ^ (worker as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    /// Row indices of global step `step`.
    pub fn rows(&self, step: u64) -> Vec<usize> {
        let Some(b) = self.batch else {
            return self.shard.clone().collect();
        };
        let epoch = step / self.steps_per_epoch;
        let pos = (step % self.steps_per_epoch) as usize;
        let mut order: Vec<usize> = self.shard.clone().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch));
        order.shuffle(&mut rng);
        (0..b).map(|j| order[(pos * b + j) % order.len()]).collect()
    }
}
