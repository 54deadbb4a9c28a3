//! Desk-scale models, synthetic data and measurement helpers used to drive
//! the algorithms end to end.

pub mod data;
pub mod metrics;
pub mod model;

pub use data::{generate, partition, BatchSchedule, DataKind, Dataset};
pub use metrics::{replica_spread, MetricRow};
pub use model::{Gradients, LayerSpec, Model, ModelSpec};
