use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Random { seed: u64 },
    Full,
}

/// Neighbour function `N(i)`. Every neighbourhood contains `i` itself.
///
/// `Random` pairs workers with a perfect matching drawn from a seed shared
/// by all workers and the round number, so every worker derives the same
/// pairing without talking to anyone. With an odd worker count one worker
/// per round is left with only itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    n: usize,
}

impl Topology {
    pub fn new(kind: TopologyKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("topology needs at least one worker".into()));
        }
        Ok(Self { kind, n })
    }

    pub fn ring(n: usize) -> Self {
        Self::new(TopologyKind::Ring, n).expect("n >= 1")
    }

    pub fn random(n: usize, seed: u64) -> Self {
        Self::new(TopologyKind::Random { seed }, n).expect("n >= 1")
    }

    pub fn full(n: usize) -> Self {
        Self::new(TopologyKind::Full, n).expect("n >= 1")
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn world_size(&self) -> usize {
        self.n
    }

    /// `N(rank)` for the given round, ascending, including `rank`.
    pub fn neighbors(&self, rank: usize, round: u64) -> Vec<usize> {
        let n = self.n;
        let mut out = match self.kind {
            TopologyKind::Full => (0..n).collect(),
            TopologyKind::Ring => vec![(rank + n - 1) % n, rank, (rank + 1) % n],
            TopologyKind::Random { seed } => match self.matching(seed, round)[rank] {
                Some(peer) => vec![rank, peer],
                None => vec![rank],
            },
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `N(rank)` without `rank`.
    pub fn peers(&self, rank: usize, round: u64) -> Vec<usize> {
        self.neighbors(rank, round)
            .into_iter()
            .filter(|&j| j != rank)
            .collect()
    }

    fn matching(&self, seed: u64, round: u64) -> Vec<Option<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(round.wrapping_mul(0xA076_1D64_78BD_642F)));
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        let mut peer = vec![None; self.n];
        for pair in order.chunks_exact(2) {
            peer[pair[0]] = Some(pair[1]);
            peer[pair[1]] = Some(pair[0]);
        }
        peer
    }

    /// Row `rank` of the averaging matrix for one round: weight `1/|N(i)|`
    /// on every neighbour.
    pub fn mixing_row(&self, rank: usize, round: u64) -> Vec<f64> {
        let nb = self.neighbors(rank, round);
        let w = 1.0 / nb.len() as f64;
        let mut row = vec![0.0; self.n];
        for j in nb {
            row[j] = w;
        }
        row
    }
}
