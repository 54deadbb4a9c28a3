//! Execution optimizer: runs an algorithm's communication hooks over a
//! layered model, profiles the first iteration, groups layers into buckets
//! and overlaps bucket communication with the remaining backward pass.
//!
//! Compute time is not measured. Each layer has a nominal forward and
//! backward cost, scaled by the worker's slowdown, and the compute timeline
//! is laid out analytically from the virtual time at which the iteration
//! starts. Communication runs on the worker's virtual clock, so a bucket
//! launched at its trigger time overlaps with backward of earlier layers.

mod schedule;
mod timeline;

use std::ops::Range;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

pub use schedule::{BucketPlan, ProfileLog, ProfileRecord, Schedule};
pub use timeline::{write_jsonl, EventKind, Pass, TimelineEvent};

use crate::collectives::Communicator;
use crate::error::{Error, Result};
use crate::harness::Gradients;
use crate::tensor::{flatten, BucketArena, FlatTensor};
use crate::transport::VirtualClock;

pub const DEFAULT_BUCKET_CAPACITY: usize = 8 << 20;

/// Where an algorithm's communication runs within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookStage {
    /// As soon as the bucket's trigger layer finished backward.
    AfterLayerBackward,
    /// After the whole backward pass, whatever the overlap setting.
    AfterAllBackward,
    /// At the start of the next iteration, before forward. The bucket's
    /// gradients are those of the previous iteration (zero at step 0).
    BeforeForward,
}

/// A member layer of a bucket and its element range in the bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub layer: usize,
    pub range: Range<usize>,
}

/// What a hook sees: the `(parameter, gradient)` pairs of one bucket as two
/// flat arenas, plus the communicator.
pub struct BucketContext<'a> {
    pub bucket: usize,
    pub step: u64,
    pub members: &'a [Member],
    pub params: &'a mut [f32],
    pub grads: &'a mut [f32],
    pub comm: &'a Communicator,
}

impl BucketContext<'_> {
    /// Member lengths, for the segmented primitives.
    pub fn segments(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.range.len()).collect()
    }

    /// Collective bucket id.
    pub fn tag(&self) -> u32 {
        self.bucket as u32
    }
}

/// A training algorithm expressed as a communication hook. The hook owns
/// the model update; it is called once per bucket per iteration.
pub trait Algorithm: Send {
    fn name(&self) -> &str;

    fn stage(&self) -> HookStage {
        HookStage::AfterLayerBackward
    }

    /// Called once, before the first iteration, with the element count of
    /// each layer in forward order.
    fn init(&mut self, _layer_lens: &[usize]) {}

    fn communicate(&mut self, ctx: &mut BucketContext<'_>) -> Result<()>;

    /// Bucket ids are reassigned; drop any state keyed by them.
    fn relayout(&mut self) {}
}

/// Nominal compute seconds of one layer per iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub forward: f64,
    pub backward: f64,
}

/// Optimization toggles. Fixed once profiling has run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOptions {
    #[serde(default = "yes")]
    pub overlap: bool,
    #[serde(default = "yes")]
    pub fusion: bool,
    #[serde(default)]
    pub hierarchical: bool,
    #[serde(default = "default_capacity")]
    pub bucket_capacity: usize,
}

fn yes() -> bool {
    true
}

fn default_capacity() -> usize {
    DEFAULT_BUCKET_CAPACITY
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            overlap: true,
            fusion: true,
            hierarchical: false,
            bucket_capacity: DEFAULT_BUCKET_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Local batch loss.
    pub loss: f64,
    pub grad_norm: f64,
    pub compute_end: f64,
    pub iteration_end: f64,
}

struct Bucket {
    params: BucketArena,
    grads: Vec<f32>,
    members: Vec<Member>,
}

/// Per-worker execution engine.
pub struct Engine {
    comm: Communicator,
    algorithm: Box<dyn Algorithm>,
    layer_meta: Vec<(String, Vec<usize>)>,
    costs: Vec<LayerCost>,
    options: EngineOptions,
    schedule: Schedule,
    buckets: Vec<Bucket>,
    located: Vec<(usize, usize)>,
    profile: Option<ProfileLog>,
    step: u64,
    local_clock: VirtualClock,
    timeline: Vec<TimelineEvent>,
}

impl Engine {
    /// Registers `algorithm` over `params` (forward layer order).
    pub fn new(comm: Communicator, params: Vec<FlatTensor>, mut algorithm: Box<dyn Algorithm>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::EmptyArena);
        }
        let layer_meta: Vec<_> = params
            .iter()
            .map(|t| (t.name().to_string(), t.shape().to_vec()))
            .collect();
        let lens: Vec<usize> = params.iter().map(FlatTensor::len).collect();
        algorithm.init(&lens);
        let schedule = Schedule::per_layer(params.len());
        let buckets = build_buckets(&schedule, params)?;
        let located = schedule.locate(layer_meta.len());
        let slowdown = comm.transport().clock().map_or(1.0, VirtualClock::slowdown);
        Ok(Self {
            costs: vec![LayerCost::default(); layer_meta.len()],
            comm,
            algorithm,
            layer_meta,
            options: EngineOptions::default(),
            schedule,
            buckets,
            located,
            profile: None,
            step: 0,
            local_clock: VirtualClock::new(slowdown),
            timeline: Vec::new(),
        })
    }

    /// Per-layer compute costs, forward order.
    pub fn with_costs(mut self, costs: Vec<LayerCost>) -> Result<Self> {
        if costs.len() != self.layer_meta.len() {
            return Err(Error::LengthMismatch {
                expected: self.layer_meta.len(),
                actual: costs.len(),
            });
        }
        self.costs = costs;
        Ok(self)
    }

    pub fn with_options(mut self, options: EngineOptions) -> Result<Self> {
        self.ensure_unprofiled()?;
        self.options = options;
        Ok(self)
    }

    pub fn set_overlap(&mut self, on: bool) -> Result<()> {
        self.ensure_unprofiled()?;
        self.options.overlap = on;
        Ok(())
    }

    pub fn set_fusion(&mut self, on: bool) -> Result<()> {
        self.ensure_unprofiled()?;
        self.options.fusion = on;
        Ok(())
    }

    pub fn set_hierarchical(&mut self, on: bool) -> Result<()> {
        self.ensure_unprofiled()?;
        self.options.hierarchical = on;
        Ok(())
    }

    pub fn set_bucket_capacity(&mut self, bytes: usize) -> Result<()> {
        self.ensure_unprofiled()?;
        self.options.bucket_capacity = bytes;
        Ok(())
    }

    fn ensure_unprofiled(&self) -> Result<()> {
        match self.profile {
            None => Ok(()),
            Some(_) => Err(Error::InvalidState("optimizations must be set before profiling")),
        }
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn algorithm(&self) -> &dyn Algorithm {
        self.algorithm.as_ref()
    }

    pub fn communicator(&self) -> &Communicator {
        &self.comm
    }

    /// Iterations completed so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Available once the first iteration has run.
    pub fn profile_log(&self) -> Option<&ProfileLog> {
        self.profile.as_ref()
    }

    pub fn timeline(&self) -> &[TimelineEvent] {
        &self.timeline
    }

    pub fn take_timeline(&mut self) -> Vec<TimelineEvent> {
        std::mem::take(&mut self.timeline)
    }

    /// Virtual time of this worker. Backends without a virtual clock only
    /// account for compute.
    pub fn now(&self) -> f64 {
        self.clock().now()
    }

    fn clock(&self) -> &VirtualClock {
        self.comm.transport().clock().unwrap_or(&self.local_clock)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_meta.len()
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        let (b, i) = self.located[l];
        self.buckets[b].params.view(i)
    }

    /// Parameters per layer, forward order.
    pub fn params(&self) -> Vec<Vec<f32>> {
        (0..self.num_layers()).map(|l| self.layer(l).to_vec()).collect()
    }

    /// All parameters concatenated in forward layer order.
    pub fn flat_params(&self) -> Vec<f32> {
        (0..self.num_layers()).flat_map(|l| self.layer(l).to_vec()).collect()
    }

    pub fn param_tensors(&self) -> Vec<FlatTensor> {
        self.layer_meta
            .iter()
            .enumerate()
            .map(|(l, (name, shape))| {
                FlatTensor::new(name.clone(), shape.clone(), self.layer(l).to_vec()).expect("layer shape")
            })
            .collect()
    }

    /// Runs one iteration. `grad_fn` computes loss and per-layer gradients
    /// (forward order) on a snapshot of the parameters; it runs on the
    /// compute context while buckets are communicated on this thread.
    pub fn step(&mut self, grad_fn: &(dyn Fn(&[&[f32]]) -> Result<Gradients> + Sync)) -> Result<StepReport> {
        let step = self.step;
        let profiling = self.profile.is_none();
        if profiling {
            self.comm.set_hierarchical(false);
        }
        let mut log = ProfileLog::default();
        let stage = self.algorithm.stage();

        if stage == HookStage::BeforeForward {
            for b in 0..self.buckets.len() {
                self.communicate(b, step, profiling, &mut log)?;
            }
        }

        let t0 = self.clock().now();
        let slowdown = self.clock().slowdown();
        let n = self.num_layers();
        let mut t = t0;
        for l in 0..n {
            self.timeline
                .push(TimelineEvent::compute(EventKind::ComputeStart, l, Pass::Forward, t, step));
            t += self.costs[l].forward * slowdown;
            self.timeline
                .push(TimelineEvent::compute(EventKind::ComputeEnd, l, Pass::Forward, t, step));
        }
        let mut backward_end = vec![0.0; n];
        for l in (0..n).rev() {
            self.timeline
                .push(TimelineEvent::compute(EventKind::ComputeStart, l, Pass::Backward, t, step));
            t += self.costs[l].backward * slowdown;
            backward_end[l] = t;
            self.timeline
                .push(TimelineEvent::compute(EventKind::ComputeEnd, l, Pass::Backward, t, step));
        }
        let compute_end = t;

        let snapshot = self.params();
        let lens: Vec<usize> = snapshot.iter().map(Vec::len).collect();
        let (loss, grad_norm) = thread::scope(|s| -> Result<(f64, f64)> {
            let (tx, rx) = mpsc::channel::<(usize, Vec<f32>)>();
            let worker = s.spawn(move || -> Result<(f64, f64)> {
                let refs: Vec<&[f32]> = snapshot.iter().map(Vec::as_slice).collect();
                let g = grad_fn(&refs)?;
                check_grads(&g, &lens)?;
                let summary = (g.loss, g.norm());
                for (l, grad) in g.grads.into_iter().enumerate().rev() {
                    if tx.send((l, grad)).is_err() {
                        break;
                    }
                }
                Ok(summary)
            });

            let comm_result = self.drain_and_communicate(&rx, step, profiling, stage, &backward_end, compute_end, &mut log);
            drop(rx);
            let compute_result = worker.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
            let summary = compute_result?;
            comm_result?;
            Ok(summary)
        })?;

        let end = self.clock().now().max(compute_end);
        self.clock().advance_to(end);

        if self
            .buckets
            .iter()
            .any(|b| b.params.as_flat().data.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Divergence { step });
        }
        if profiling {
            self.finish_profile(log)?;
        }
        self.step += 1;
        Ok(StepReport {
            step,
            loss,
            grad_norm,
            compute_end,
            iteration_end: end,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn drain_and_communicate(
        &mut self,
        rx: &mpsc::Receiver<(usize, Vec<f32>)>,
        step: u64,
        profiling: bool,
        stage: HookStage,
        backward_end: &[f64],
        compute_end: f64,
        log: &mut ProfileLog,
    ) -> Result<()> {
        let mut ready = vec![false; self.num_layers()];
        for b in 0..self.buckets.len() {
            while !self.schedule.buckets[b].layers.iter().all(|&l| ready[l]) {
                let Ok((l, grad)) = rx.recv() else {
                    // Compute failed; its error is reported by the caller.
                    return Ok(());
                };
                let (lb, i) = self.located[l];
                let range = self.buckets[lb].members[i].range.clone();
                self.buckets[lb].grads[range].copy_from_slice(&grad);
                ready[l] = true;
            }
            if stage == HookStage::BeforeForward {
                continue;
            }
            let trigger = self.schedule.buckets[b].trigger;
            let overlap = self.options.overlap && !profiling && stage == HookStage::AfterLayerBackward;
            let release = if overlap { backward_end[trigger] } else { compute_end };
            let start = self.clock().now().max(release);
            self.clock().advance_to(start);
            self.communicate(b, step, profiling, log)?;
        }
        Ok(())
    }

    fn communicate(&mut self, b: usize, step: u64, profiling: bool, log: &mut ProfileLog) -> Result<()> {
        let start = self.clock().now();
        self.timeline.push(TimelineEvent::comm(EventKind::CommStart, b, start, step));
        if profiling {
            for &l in &self.schedule.buckets[b].layers {
                let (name, shape) = &self.layer_meta[l];
                let len: usize = shape.iter().product();
                log.push(ProfileRecord {
                    layer: l,
                    name: name.clone(),
                    shape: shape.clone(),
                    bytes: len * 4,
                    invocation: log.records().len(),
                    virtual_time: start,
                });
            }
        }
        let bucket = &mut self.buckets[b];
        let mut ctx = BucketContext {
            bucket: b,
            step,
            members: &bucket.members,
            params: bucket.params.as_flat_mut().data,
            grads: &mut bucket.grads,
            comm: &self.comm,
        };
        let result = self.algorithm.communicate(&mut ctx);
        if let Err(e) = result {
            return Err(if profiling {
                Error::Hook {
                    layer: self.schedule.buckets[b].trigger,
                    source: Box::new(e),
                }
            } else {
                Error::Comm {
                    bucket: b,
                    source: Box::new(e),
                }
            });
        }
        let end = self.clock().now();
        self.timeline.push(TimelineEvent::comm(EventKind::CommEnd, b, end, step));
        Ok(())
    }

    fn finish_profile(&mut self, mut log: ProfileLog) -> Result<()> {
        log.freeze();
        let n = self.num_layers();
        let schedule = if self.options.fusion {
            let bytes: Vec<usize> = self
                .layer_meta
                .iter()
                .map(|(_, s)| s.iter().product::<usize>() * 4)
                .collect();
            let mut order = log.layer_order();
            if self.algorithm.stage() == HookStage::BeforeForward {
                order.reverse();
            }
            Schedule::greedy(&order, &bytes, self.options.bucket_capacity)
        } else {
            Schedule::per_layer(n)
        };
        let params = self.param_tensors();
        self.buckets = build_buckets(&schedule, params)?;
        self.located = schedule.locate(n);
        self.schedule = schedule;
        self.profile = Some(log);
        self.comm.set_hierarchical(self.options.hierarchical);
        self.algorithm.relayout();
        Ok(())
    }
}

fn build_buckets(schedule: &Schedule, params: Vec<FlatTensor>) -> Result<Vec<Bucket>> {
    let mut slots: Vec<Option<FlatTensor>> = params.into_iter().map(Some).collect();
    schedule
        .buckets
        .iter()
        .map(|plan| {
            let tensors: Vec<FlatTensor> = plan
                .layers
                .iter()
                .map(|&l| slots[l].take().expect("layer in one bucket"))
                .collect();
            let arena = flatten(tensors)?;
            let members = plan
                .layers
                .iter()
                .zip(arena.members())
                .map(|(&layer, v)| Member {
                    layer,
                    range: v.range(),
                })
                .collect();
            Ok(Bucket {
                grads: vec![0.0; arena.len()],
                params: arena,
                members,
            })
        })
        .collect()
}

fn check_grads(g: &Gradients, lens: &[usize]) -> Result<()> {
    if g.grads.len() != lens.len() {
        return Err(Error::LengthMismatch {
            expected: lens.len(),
            actual: g.grads.len(),
        });
    }
    for (grad, &len) in g.grads.iter().zip(lens) {
        if grad.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: grad.len(),
            });
        }
    }
    Ok(())
}
