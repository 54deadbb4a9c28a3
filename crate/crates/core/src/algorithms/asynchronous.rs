//! Asynchronous training: every worker takes local SGD steps back to back
//! and never waits for the network, while a communication context keeps
//! averaging model snapshots across workers.
//!
//! The two contexts of a worker are interleaved deterministically on its
//! virtual timeline. Step `k` starts at `t0 + k * c` on the model available
//! at that instant and applies its update at `t0 + (k + 1) * c`, where `c`
//! is the per-step compute time. A communication round takes a snapshot,
//! averages snapshots across all workers and, when it completes, replaces
//! the model with the average plus whatever local progress happened while
//! the round was in flight.

use crate::collectives::Communicator;
use crate::error::{Error, Result};
use crate::harness::Gradients;
use crate::tensor::FlatTensor;
use crate::transport::VirtualClock;

/// Collective bucket id reserved for async model averaging.
pub const ASYNC_BUCKET: u32 = 0x0FFF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncConfig {
    pub lr: f32,
    /// Local steps this worker performs in total.
    pub quota: u64,
    /// Nominal compute seconds per step before the worker's slowdown.
    pub step_cost: f64,
    pub communication: bool,
    /// Staleness above this is logged; it is never enforced.
    pub max_staleness: Option<u64>,
}

/// One finished communication round as seen by one worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncRound {
    pub round: u64,
    pub steps_done: u64,
    /// Local steps applied between snapshot and merge.
    pub staleness: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub virtual_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncSummary {
    pub rounds: u64,
    pub steps: u64,
    pub max_staleness: u64,
    pub loss: f64,
}

/// Splits `total` steps among workers with per-step times `step_times`:
/// the `total` earliest completions `k * c_i`, ties broken by `(k, rank)`.
pub fn async_quotas(total: u64, step_times: &[f64]) -> Vec<u64> {
    let mut quota = vec![0u64; step_times.len()];
    for _ in 0..total {
        let next = (0..step_times.len())
            .min_by(|&a, &b| {
                let ta = (quota[a] + 1) as f64 * step_times[a];
                let tb = (quota[b] + 1) as f64 * step_times[b];
                ta.total_cmp(&tb).then(quota[a].cmp(&quota[b])).then(a.cmp(&b))
            })
            .expect("at least one worker");
        quota[next] += 1;
    }
    quota
}

type StepGradient<'a> = &'a (dyn Fn(&[&[f32]], u64) -> Result<Gradients> + Sync);

pub struct AsyncTrainer {
    comm: Communicator,
    names: Vec<(String, Vec<usize>)>,
    x: Vec<f32>,
    config: AsyncConfig,
    local_clock: VirtualClock,
    steps: u64,
    pending: Option<Vec<f32>>,
    last: (f64, f64),
}

impl AsyncTrainer {
    pub fn new(comm: Communicator, params: Vec<FlatTensor>, config: AsyncConfig) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::EmptyArena);
        }
        if !(config.step_cost >= 0.0 && config.step_cost.is_finite()) {
            return Err(Error::config("compute", "step cost must be finite and >= 0"));
        }
        let names = params
            .iter()
            .map(|t| (t.name().to_string(), t.shape().to_vec()))
            .collect();
        let x = params.into_iter().flat_map(FlatTensor::into_data).collect();
        let slowdown = comm.transport().clock().map_or(1.0, VirtualClock::slowdown);
        Ok(Self {
            comm,
            names,
            x,
            config,
            local_clock: VirtualClock::new(slowdown),
            steps: 0,
            pending: None,
            last: (f64::NAN, f64::NAN),
        })
    }

    fn clock(&self) -> &VirtualClock {
        self.comm.transport().clock().unwrap_or(&self.local_clock)
    }

    pub fn now(&self) -> f64 {
        self.clock().now()
    }

    pub fn flat_params(&self) -> &[f32] {
        &self.x
    }

    pub fn param_tensors(&self) -> Vec<FlatTensor> {
        let mut offset = 0;
        self.names
            .iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let data = self.x[offset..offset + len].to_vec();
                offset += len;
                FlatTensor::new(name.clone(), shape.clone(), data).expect("layer shape")
            })
            .collect()
    }

    fn layers(&self) -> Vec<&[f32]> {
        let mut rest = self.x.as_slice();
        self.names
            .iter()
            .map(|(_, shape)| {
                let (head, tail) = rest.split_at(shape.iter().product());
                rest = tail;
                head
            })
            .collect()
    }

    /// Processes compute events up to virtual time `t`: updates ending at
    /// or before `t` are applied, steps starting strictly before `t` read
    /// the model.
    fn advance(&mut self, t0: f64, step_time: f64, t: f64, grad: StepGradient<'_>) -> Result<()> {
        while self.steps < self.config.quota {
            let k = self.steps;
            match self.pending.take() {
                None => {
                    if t0 + k as f64 * step_time >= t {
                        return Ok(());
                    }
                    let g = grad(&self.layers(), k)?;
                    self.last = (g.loss, g.norm());
                    self.pending = Some(g.grads.concat());
                }
                Some(g) => {
                    if t0 + (k + 1) as f64 * step_time > t {
                        self.pending = Some(g);
                        return Ok(());
                    }
                    for (x, g) in self.x.iter_mut().zip(&g) {
                        *x -= self.config.lr * g;
                    }
                    self.steps += 1;
                }
            }
        }
        Ok(())
    }

    /// Runs until every worker has used up its quota. `grad` receives the
    /// model layers and the local step index.
    pub fn run(&mut self, grad: StepGradient<'_>, on_round: &mut dyn FnMut(&AsyncRound)) -> Result<AsyncSummary> {
        let t0 = self.now();
        let step_time = self.config.step_cost * self.clock().slowdown();
        let n = self.comm.world_size() as f32;
        let mut rounds = 0u64;
        let mut max_staleness = 0u64;
        // Reported until the first local step has run.
        let g = grad(&self.layers(), 0)?;
        self.last = (g.loss, g.norm());

        if !self.config.communication {
            self.advance(t0, step_time, f64::INFINITY, grad)?;
            self.check_finite()?;
            self.clock().advance_to(t0 + self.steps as f64 * step_time);
            return Ok(self.summary(rounds, max_staleness));
        }

        let mut snapped = 0u64;
        loop {
            let active = self.steps < self.config.quota;
            let mut start = self.now();
            if active {
                start = start.max(t0 + (snapped + 1) as f64 * step_time);
            }
            self.advance(t0, step_time, start, grad)?;
            self.clock().advance_to(start);
            snapped = self.steps;
            let active = self.steps < self.config.quota;

            let snapshot = self.x.clone();
            let mut buf = snapshot.clone();
            buf.push(if active { 1.0 } else { 0.0 });
            self.comm.c_fp_s(ASYNC_BUCKET, &mut buf)?;
            let still_running = buf.pop().expect("flag") > 0.0;
            let merged_at = self.now();

            self.advance(t0, step_time, merged_at, grad)?;
            for ((x, &avg), &s) in self.x.iter_mut().zip(&buf).zip(&snapshot) {
                *x = avg / n + (*x - s);
            }
            self.check_finite()?;
            let staleness = self.steps - snapped;
            max_staleness = max_staleness.max(staleness);
            if let Some(bound) = self.config.max_staleness {
                if staleness > bound {
                    log::warn!(
                        "worker {} round {rounds}: staleness {staleness} exceeds {bound}",
                        self.comm.rank()
                    );
                }
            }
            on_round(&AsyncRound {
                round: rounds,
                steps_done: self.steps,
                staleness,
                loss: self.last.0,
                grad_norm: self.last.1,
                virtual_time: merged_at,
            });
            rounds += 1;
            if !still_running {
                break;
            }
        }
        Ok(self.summary(rounds, max_staleness))
    }

    fn check_finite(&self) -> Result<()> {
        if self.x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { step: self.steps })
        }
    }

    fn summary(&self, rounds: u64, max_staleness: u64) -> AsyncSummary {
        AsyncSummary {
            rounds,
            steps: self.steps,
            max_staleness,
            loss: self.last.0,
        }
    }
}
