//! The six training algorithms. The synchronous ones are engine hooks over
//! the collective primitives; `async` has its own trainer.
//!
//! All centralized algorithms divide aggregated sums by the worker count
//! and all decentralized ones average over the neighbourhood, so a learning
//! rate means the same thing for any `n`.

mod asynchronous;
mod sync;

use serde::{Deserialize, Serialize};

pub use asynchronous::{async_quotas, AsyncConfig, AsyncRound, AsyncSummary, AsyncTrainer, ASYNC_BUCKET};
pub use sync::{Allreduce, Decentralized, OnebitAdam, Qsgd};

use crate::codec::{Codec, Rounding};
use crate::collectives::TopologyKind;
use crate::engine::Algorithm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    /// Full-precision gradient averaging.
    Allreduce { lr: f32 },
    /// Gradient averaging through an 8-bit codec without error feedback.
    Qsgd8 {
        lr: f32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        codec: Option<Codec>,
    },
    /// Adam with full-precision warmup, then frozen variance and 1-bit
    /// compressed momentum with error feedback.
    OnebitAdam {
        lr: f32,
        warmup_steps: u64,
        #[serde(default = "beta1")]
        beta1: f32,
        #[serde(default = "beta2")]
        beta2: f32,
        #[serde(default = "adam_eps")]
        eps: f32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        codec: Option<Codec>,
    },
    /// Local step, then full-precision neighbourhood model averaging.
    Decen32 {
        lr: f32,
        #[serde(default = "random_probing")]
        topology: TopologyKind,
    },
    /// Local step, then 8-bit neighbourhood model averaging.
    Decen8 {
        lr: f32,
        #[serde(default = "random_probing")]
        topology: TopologyKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        codec: Option<Codec>,
    },
    /// Local steps that never wait, with model averaging running alongside.
    Async {
        lr: f32,
        /// Rounds with larger observed staleness are logged.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_staleness: Option<u64>,
        #[serde(default = "yes")]
        communication: bool,
    },
}

fn beta1() -> f32 {
    0.9
}

fn beta2() -> f32 {
    0.999
}

fn adam_eps() -> f32 {
    1e-8
}

fn yes() -> bool {
    true
}

fn random_probing() -> TopologyKind {
    TopologyKind::Random { seed: 0 }
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Allreduce { .. } => "allreduce",
            Self::Qsgd8 { .. } => "qsgd8",
            Self::OnebitAdam { .. } => "onebit_adam",
            Self::Decen32 { .. } => "decen32",
            Self::Decen8 { .. } => "decen8",
            Self::Async { .. } => "async",
        }
    }

    pub fn lr(&self) -> f32 {
        match *self {
            Self::Allreduce { lr }
            | Self::Qsgd8 { lr, .. }
            | Self::OnebitAdam { lr, .. }
            | Self::Decen32 { lr, .. }
            | Self::Decen8 { lr, .. }
            | Self::Async { lr, .. } => lr,
        }
    }

    pub fn is_async(&self) -> bool {
        matches!(self, Self::Async { .. })
    }

    /// Whether replicas may legitimately differ between workers.
    pub fn is_decentralized(&self) -> bool {
        matches!(self, Self::Decen32 { .. } | Self::Decen8 { .. } | Self::Async { .. })
    }

    /// Whether the hook compresses with a lossy codec.
    pub fn is_lossy(&self) -> bool {
        match *self {
            Self::Qsgd8 { codec, .. } => !codec.unwrap_or_else(qsgd_codec).is_lossless(),
            Self::OnebitAdam { codec, .. } => !codec.unwrap_or_else(Codec::onebit).is_lossless(),
            Self::Decen8 { codec, .. } => !codec.unwrap_or_else(qsgd_codec).is_lossless(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::config("algorithm.lr", "must be finite and >= 0"));
        }
        if let Self::OnebitAdam {
            warmup_steps,
            beta1,
            beta2,
            eps,
            ..
        } = *self
        {
            if warmup_steps == 0 {
                return Err(Error::config("algorithm.warmup_steps", "must be at least 1"));
            }
            for (key, b) in [("algorithm.beta1", beta1), ("algorithm.beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::config(key, "must lie in [0, 1)"));
                }
            }
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config("algorithm.eps", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// The engine hook of a synchronous algorithm.
    pub fn build(&self) -> Result<Box<dyn Algorithm>> {
        self.validate()?;
        Ok(match *self {
            Self::Allreduce { lr } => Box::new(Allreduce::new(lr)),
            Self::Qsgd8 { lr, codec } => Box::new(Qsgd::new(lr, codec.unwrap_or_else(qsgd_codec))),
            Self::OnebitAdam {
                lr,
                warmup_steps,
                beta1,
                beta2,
                eps,
                codec,
            } => Box::new(
                OnebitAdam::new(lr, warmup_steps)
                    .with_betas(beta1, beta2, eps)
                    .with_codec(codec.unwrap_or_else(Codec::onebit)),
            ),
            Self::Decen32 { lr, topology } => Box::new(Decentralized::new(lr, topology, None)),
            Self::Decen8 { lr, topology, codec } => {
                Box::new(Decentralized::new(lr, topology, Some(codec.unwrap_or_else(qsgd_codec))))
            }
            Self::Async { .. } => {
                return Err(Error::InvalidState("async runs on its own trainer, not as an engine hook"))
            }
        })
    }
}

fn qsgd_codec() -> Codec {
    Codec::uniform8(Rounding::Nearest)
}
