//! Experiment runner: builds the cluster, runs every worker, funnels the
//! per-worker reports through one collector and writes metrics.

mod config;
mod sweep;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{ComputeConfig, DataConfig, ExperimentConfig};
pub use sweep::{ablate, parse_axes, sweep, write_ablation_csv, write_sweep_csv, AblationRow, Axis, SweepRow};

use crate::algorithms::{async_quotas, AlgorithmSpec, AsyncConfig, AsyncTrainer};
use crate::collectives::{tag, Communicator, Phase};
use crate::engine::{write_jsonl, Engine, LayerCost, TimelineEvent};
use crate::error::{Error, Result};
use crate::harness::{generate, metrics, partition, replica_spread, BatchSchedule, Dataset, MetricRow, Model};
use crate::transport::{localhost_mesh, Backend, SimCluster, Transport};

/// Collective bucket id reserved for shipping reports to rank 0.
const REPORT_BUCKET: u32 = 0x0FFF_FFFE;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

/// Everything one worker hands to the collector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub rank: usize,
    pub rows: Vec<MetricRow>,
    /// Parameters at the end of every epoch, keyed by step.
    pub snapshots: Vec<(u64, Vec<f32>)>,
    pub final_params: Vec<f32>,
    /// Mean loss of the final parameters over the full dataset.
    pub final_loss: f64,
    pub bytes_sent: u64,
    pub virtual_time: Option<f64>,
    pub steps_per_epoch: u64,
    #[serde(default)]
    pub timeline: Vec<TimelineEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub n_workers: usize,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    /// Full-dataset loss averaged over workers.
    pub final_loss: f64,
    /// Virtual makespan divided by epochs; absent without a virtual clock.
    pub epoch_virtual_time: Option<f64>,
    pub bytes_per_epoch: f64,
    pub replica_spread_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Summary,
    pub rows: Vec<MetricRow>,
    pub final_params: Vec<Vec<f32>>,
    pub timelines: Vec<Vec<TimelineEvent>>,
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate(cfg.data_kind(), cfg.data.n_samples, cfg.model.dim(), cfg.data_seed())
}

/// Trains on one worker and returns its report.
pub fn run_worker(cfg: &ExperimentConfig, data: &Dataset, transport: Arc<dyn Transport>) -> Result<WorkerReport> {
    let rank = transport.rank();
    let n = transport.world_size();
    let model = Model::new(cfg.model)?;
    let shards = partition(data.len(), n)?;
    let batches = BatchSchedule::new(&shards, rank, cfg.data.batch_size, cfg.seed)?;
    let spe = batches.steps_per_epoch();
    let total_steps = spe * cfg.epochs;
    let batch = batches.rows(0).len() as f64;
    let costs: Vec<LayerCost> = model
        .layers()
        .iter()
        .map(|l| LayerCost {
            forward: cfg.compute.forward * l.len() as f64 * batch,
            backward: cfg.compute.backward * l.len() as f64 * batch,
        })
        .collect();
    let comm = Communicator::new(Arc::clone(&transport));
    let params = model.init(cfg.seed);
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let clock_now = || transport.clock().map(|c| c.now());

    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let (final_params, timeline) = if let AlgorithmSpec::Async {
        lr,
        max_staleness,
        communication,
    } = cfg.algorithm
    {
        let step_cost: f64 = costs.iter().map(|c| c.forward + c.backward).sum();
        let step_times: Vec<f64> = (0..n)
            .map(|r| step_cost * cfg.cluster.network.slowdown(r))
            .collect();
        let quotas = if communication {
            async_quotas(n as u64 * total_steps, &step_times)
        } else {
            vec![total_steps; n]
        };
        let config = AsyncConfig {
            lr,
            quota: quotas[rank],
            step_cost,
            communication,
            max_staleness,
        };
        let mut trainer = AsyncTrainer::new(comm, params, config)?;
        let grad = |p: &[&[f32]], k: u64| model.gradient(p, data, &batches.rows(k));
        trainer.run(&grad, &mut |r| {
            rows.push(MetricRow {
                step: r.round,
                worker: rank,
                loss: r.loss,
                grad_norm: r.grad_norm,
                replica_spread: None,
                staleness: Some(r.staleness),
                bytes_sent: transport.bytes_sent(),
                virtual_time: clock_now(),
            })
        })?;
        (trainer.flat_params().to_vec(), Vec::new())
    } else {
        let algorithm = cfg.algorithm.build()?;
        let mut engine = Engine::new(comm, params, algorithm)?
            .with_costs(costs)?
            .with_options(cfg.optimizations)?;
        for step in 0..total_steps {
            let batch_rows = batches.rows(step);
            let grad = |p: &[&[f32]]| model.gradient(p, data, &batch_rows);
            let report = engine.step(&grad)?;
            rows.push(MetricRow {
                step,
                worker: rank,
                loss: report.loss,
                grad_norm: report.grad_norm,
                replica_spread: None,
                staleness: None,
                bytes_sent: transport.bytes_sent(),
                virtual_time: clock_now(),
            });
            if (step + 1) % spe == 0 {
                snapshots.push((step, engine.flat_params()));
            }
            if !cfg.trace {
                engine.take_timeline();
            }
        }
        (engine.flat_params(), engine.take_timeline())
    };

    let layers = split(&final_params, &model);
    let final_loss = model.loss(&layers, data, &all_rows)?;
    Ok(WorkerReport {
        rank,
        rows,
        snapshots,
        final_params,
        final_loss,
        bytes_sent: transport.bytes_sent(),
        virtual_time: clock_now(),
        steps_per_epoch: spe,
        timeline,
    })
}

fn split<'a>(flat: &'a [f32], model: &Model) -> Vec<&'a [f32]> {
    let mut rest = flat;
    model
        .layers()
        .iter()
        .map(|l| {
            let (head, tail) = rest.split_at(l.len());
            rest = tail;
            head
        })
        .collect()
}

/// Merges worker reports: rows ordered by `(step, worker)` with replica
/// spread filled in at epoch ends, plus the run summary.
pub fn collect(cfg: &ExperimentConfig, mut reports: Vec<WorkerReport>) -> Result<Outcome> {
    if reports.is_empty() {
        return Err(Error::InvalidSize("no worker reports".into()));
    }
    reports.sort_by_key(|r| r.rank);
    let n = reports.len();
    let epochs = cfg.epochs as f64;

    let mut spread_at = std::collections::BTreeMap::new();
    for (i, (step, _)) in reports[0].snapshots.iter().enumerate() {
        let replicas: Option<Vec<Vec<f32>>> = reports
            .iter()
            .map(|r| r.snapshots.get(i).filter(|(s, _)| s == step).map(|(_, p)| p.clone()))
            .collect();
        if let Some(replicas) = replicas {
            spread_at.insert(*step, replica_spread(&replicas));
        }
    }
    let mut rows: Vec<MetricRow> = reports.iter().flat_map(|r| r.rows.clone()).collect();
    rows.sort_by_key(|r| (r.step, r.worker));
    if !cfg.algorithm.is_async() {
        for row in &mut rows {
            row.replica_spread = spread_at.get(&row.step).copied();
        }
    }

    let final_params: Vec<Vec<f32>> = reports.iter().map(|r| r.final_params.clone()).collect();
    let makespan = reports
        .iter()
        .map(|r| r.virtual_time)
        .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)));
    let summary = Summary {
        algorithm: cfg.algorithm.name().to_string(),
        n_workers: n,
        epochs: cfg.epochs,
        steps_per_epoch: reports[0].steps_per_epoch,
        final_loss: reports.iter().map(|r| r.final_loss).sum::<f64>() / n as f64,
        epoch_virtual_time: makespan.map(|t| t / epochs),
        bytes_per_epoch: reports.iter().map(|r| r.bytes_sent).sum::<u64>() as f64 / epochs,
        replica_spread_final: replica_spread(&final_params),
    };
    Ok(Outcome {
        summary,
        rows,
        final_params,
        timelines: reports.into_iter().map(|r| r.timeline).collect(),
    })
}

/// Runs the whole experiment in this process: one thread per worker on
/// the simulated backend, or a localhost TCP mesh on the tcp backend.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let layout = cfg.cluster.layout()?;
    let reports = match cfg.cluster.backend {
        Backend::Sim => {
            let cluster = SimCluster::new(layout, cfg.cluster.network.clone())?;
            cluster.run(|ep| run_worker(cfg, &data, ep))?
        }
        Backend::Tcp => {
            let endpoints = localhost_mesh(&layout, CONNECT_TIMEOUT)?;
            let results: Vec<Result<WorkerReport>> = std::thread::scope(|s| {
                let handles: Vec<_> = endpoints
                    .into_iter()
                    .map(|ep| {
                        let data = &data;
                        s.spawn(move || {
                            let ep: Arc<dyn Transport> = Arc::new(ep);
                            let out = run_worker(cfg, data, Arc::clone(&ep));
                            if out.is_err() {
                                ep.close();
                            }
                            out
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                    .collect()
            });
            first_error(results)?
        }
    };
    collect(cfg, reports)
}

/// Prefers a root cause over the `Closed` errors it triggers on peers.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut closed = false;
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(Error::Closed) => closed = true,
            Err(e) => return Err(e),
        }
    }
    if closed {
        return Err(Error::Closed);
    }
    Ok(out)
}

/// One process of a multi-process tcp run. Rank 0 gathers every report and
/// returns the outcome; other ranks return `None`.
pub fn run_rank(cfg: &ExperimentConfig, transport: Arc<dyn Transport>) -> Result<Option<Outcome>> {
    cfg.validate()?;
    let data = dataset(cfg)?;
    let report = run_worker(cfg, &data, Arc::clone(&transport))?;
    let report_tag = tag(REPORT_BUCKET, Phase::Scatter);
    if transport.rank() != 0 {
        let bytes = serde_json::to_vec(&report).map_err(std::io::Error::from)?;
        transport.send(0, report_tag, bytes)?;
        return Ok(None);
    }
    let mut reports = vec![report];
    for src in 1..transport.world_size() {
        let bytes = transport.recv(src, report_tag)?;
        let r: WorkerReport = serde_json::from_slice(&bytes)
            .map_err(|e| Error::MalformedPayload(format!("report from rank {src}: {e}")))?;
        reports.push(r);
    }
    collect(cfg, reports).map(Some)
}

/// Writes `metrics.csv`, `summary.json` and, when traced, one timeline
/// file per worker into `dir`.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    metrics::write_csv(&outcome.rows, &mut w)?;
    w.flush()?;
    let summary = serde_json::to_string_pretty(&outcome.summary).map_err(std::io::Error::from)?;
    fs::write(dir.join("summary.json"), summary + "\n")?;
    for (rank, events) in outcome.timelines.iter().enumerate() {
        if events.is_empty() {
            continue;
        }
        let mut w = BufWriter::new(File::create(dir.join(format!("timeline_rank{rank}.jsonl")))?);
        write_jsonl(events, &mut w)?;
        w.flush()?;
    }
    Ok(())
}
