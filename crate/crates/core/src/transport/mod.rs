//! Point-to-point messaging between workers.
//!
//! Two backends implement [`Transport`]: [`sim::SimCluster`] routes messages
//! between threads of one process and charges them to a virtual clock, and
//! [`tcp::TcpEndpoint`] uses real sockets. Collectives are written against
//! the trait only, so both produce the same numbers.

pub mod frame;
pub mod sim;
pub mod tcp;

use std::net::SocketAddr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use frame::Message;
pub use sim::{SimCluster, SimEndpoint};
pub use tcp::{localhost_mesh, TcpEndpoint};

/// Collective-round identifier attached to every message.
pub type Tag = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkerId {
    pub rank: usize,
    pub node: usize,
}

/// Assignment of ranks to nodes. The leader of a node is its lowest rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLayout {
    node_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterLayout {
    pub fn new(node_of: Vec<usize>) -> Result<Self> {
        if node_of.is_empty() {
            return Err(Error::InvalidLayout("cluster needs at least one worker".into()));
        }
        let n_nodes = node_of.iter().max().unwrap() + 1;
        let mut members = vec![Vec::new(); n_nodes];
        for (rank, &node) in node_of.iter().enumerate() {
            members[node].push(rank);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyNodeGroup(empty));
        }
        Ok(Self { node_of, members })
    }

    /// `n` ranks split into `nodes` contiguous blocks whose sizes differ by
    /// at most one.
    pub fn contiguous(n: usize, nodes: usize) -> Result<Self> {
        if nodes == 0 || nodes > n {
            return Err(Error::InvalidLayout(format!(
                "cannot place {n} workers on {nodes} nodes"
            )));
        }
        let node_of = (0..n)
            .map(|rank| {
                crate::collectives::partition_owner(rank, n, nodes)
            })
            .collect();
        Self::new(node_of)
    }

    pub fn flat(n: usize) -> Self {
        Self::contiguous(n, 1).expect("n >= 1")
    }

    pub fn world_size(&self) -> usize {
        self.node_of.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.members.len()
    }

    pub fn node_of(&self, rank: usize) -> usize {
        self.node_of[rank]
    }

    pub fn worker(&self, rank: usize) -> WorkerId {
        WorkerId {
            rank,
            node: self.node_of[rank],
        }
    }

    pub fn members(&self, node: usize) -> &[usize] {
        &self.members[node]
    }

    pub fn leader(&self, node: usize) -> usize {
        self.members[node][0]
    }

    pub fn is_leader(&self, rank: usize) -> bool {
        self.leader(self.node_of[rank]) == rank
    }

    pub fn leaders(&self) -> Vec<usize> {
        (0..self.n_nodes()).map(|n| self.leader(n)).collect()
    }

    pub fn link(&self, a: usize, b: usize) -> LinkClass {
        if self.node_of[a] == self.node_of[b] {
            LinkClass::IntraNode
        } else {
            LinkClass::InterNode
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    IntraNode,
    InterNode,
}

/// Alpha-beta cost of one link class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCost {
    /// Seconds per message.
    pub latency: f64,
    /// Payload bytes per second.
    pub bandwidth: f64,
}

impl LinkCost {
    pub fn transfer_time(&self, bytes: usize) -> f64 {
        bytes as f64 / self.bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Straggler {
    pub rank: usize,
    /// Compute time multiplier, at least 1.
    pub slowdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkProfile {
    pub intra_node: LinkCost,
    pub inter_node: LinkCost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straggler: Option<Straggler>,
}

impl Default for NetworkProfile {
    fn default() -> Self {
        Self {
            intra_node: LinkCost {
                latency: 5e-6,
                bandwidth: 1e11,
            },
            inter_node: LinkCost {
                latency: 1e-4,
                bandwidth: 1.25e9,
            },
            straggler: None,
        }
    }
}

impl NetworkProfile {
    /// Same cost for every pair of workers.
    pub fn uniform(latency: f64, bandwidth: f64) -> Self {
        let link = LinkCost { latency, bandwidth };
        Self {
            intra_node: link,
            inter_node: link,
            straggler: None,
        }
    }

    pub fn with_straggler(mut self, rank: usize, slowdown: f64) -> Self {
        self.straggler = Some(Straggler { rank, slowdown });
        self
    }

    pub fn cost(&self, class: LinkClass) -> LinkCost {
        match class {
            LinkClass::IntraNode => self.intra_node,
            LinkClass::InterNode => self.inter_node,
        }
    }

    pub fn slowdown(&self, rank: usize) -> f64 {
        match self.straggler {
            Some(s) if s.rank == rank => s.slowdown,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, link) in [("intra_node", self.intra_node), ("inter_node", self.inter_node)] {
            if !(link.latency >= 0.0 && link.latency.is_finite()) {
                return Err(Error::config(
                    format!("network.{key}.latency"),
                    "latency must be finite and >= 0",
                ));
            }
            if !(link.bandwidth > 0.0) {
                return Err(Error::config(
                    format!("network.{key}.bandwidth"),
                    "bandwidth must be > 0",
                ));
            }
        }
        if let Some(s) = self.straggler {
            if !(s.slowdown >= 1.0 && s.slowdown.is_finite()) {
                return Err(Error::config(
                    "network.straggler.slowdown",
                    "slowdown must be finite and >= 1",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Sim,
    Tcp,
}

/// Cluster description as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_workers: usize,
    #[serde(default = "one")]
    pub nodes: usize,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub addresses: Vec<SocketAddr>,
    #[serde(default)]
    pub network: NetworkProfile,
}

fn one() -> usize {
    1
}

impl ClusterConfig {
    pub fn layout(&self) -> Result<ClusterLayout> {
        if self.n_workers == 0 {
            return Err(Error::config("cluster.n_workers", "must be at least 1"));
        }
        ClusterLayout::contiguous(self.n_workers, self.nodes)
            .map_err(|e| Error::config("cluster.nodes", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        self.network.validate()?;
        if let Some(s) = self.network.straggler {
            if s.rank >= self.n_workers {
                return Err(Error::config(
                    "cluster.network.straggler.rank",
                    format!("rank {} out of range", s.rank),
                ));
            }
        }
        if self.backend == Backend::Tcp
            && !self.addresses.is_empty()
            && self.addresses.len() != self.n_workers
        {
            return Err(Error::config(
                "cluster.addresses",
                "tcp backend needs one address per worker",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ClockState {
    now: f64,
    nic_free: [f64; 2],
}

/// Per-worker virtual clock of the simulated backend.
///
/// Sends are charged `latency + bytes / bandwidth`; transmissions of one
/// worker on the same link class are serialised on its egress. A receive
/// moves the clock forward to the message arrival time.
#[derive(Debug)]
pub struct VirtualClock {
    state: Mutex<ClockState>,
    slowdown: f64,
}

impl VirtualClock {
    pub fn new(slowdown: f64) -> Self {
        Self {
            state: Mutex::new(ClockState {
                now: 0.0,
                nic_free: [0.0; 2],
            }),
            slowdown,
        }
    }

    pub fn now(&self) -> f64 {
        self.state.lock().unwrap().now
    }

    pub fn slowdown(&self) -> f64 {
        self.slowdown
    }

    pub fn advance_to(&self, t: f64) {
        let mut s = self.state.lock().unwrap();
        if t > s.now {
            s.now = t;
        }
    }

    /// Charges a compute span of nominal `duration` seconds and returns its
    /// virtual `(start, end)`.
    pub fn compute(&self, duration: f64) -> (f64, f64) {
        let mut s = self.state.lock().unwrap();
        let start = s.now;
        s.now += duration * self.slowdown;
        (start, s.now)
    }

    /// Reserves the egress for a message and returns its arrival time.
    pub(crate) fn schedule_send(&self, class: LinkClass, cost: LinkCost, bytes: usize) -> f64 {
        let mut s = self.state.lock().unwrap();
        let lane = match class {
            LinkClass::IntraNode => 0,
            LinkClass::InterNode => 1,
        };
        let start = s.now.max(s.nic_free[lane]);
        let done = start + cost.transfer_time(bytes);
        s.nic_free[lane] = done;
        done + cost.latency
    }
}

/// A worker's connection to the rest of the cluster.
pub trait Transport: Send + Sync {
    fn rank(&self) -> usize;

    fn layout(&self) -> &ClusterLayout;

    fn world_size(&self) -> usize {
        self.layout().world_size()
    }

    /// Queues `payload` for `dst`. Messages on one `(src, dst, tag)` stream
    /// are delivered in send order, exactly once.
    fn send(&self, dst: usize, tag: Tag, payload: Vec<u8>) -> Result<()>;

    /// Blocks until a message from `src` with `tag` is available.
    fn recv(&self, src: usize, tag: Tag) -> Result<Vec<u8>>;

    /// The virtual clock, on backends that have one.
    fn clock(&self) -> Option<&VirtualClock> {
        None
    }

    fn bytes_sent(&self) -> u64;

    fn messages_sent(&self) -> u64;

    fn close(&self);
}

/// Current virtual time of this worker.
pub fn virtual_elapsed(transport: &dyn Transport) -> Result<f64> {
    transport
        .clock()
        .map(VirtualClock::now)
        .ok_or(Error::Unsupported("virtual clock"))
}
