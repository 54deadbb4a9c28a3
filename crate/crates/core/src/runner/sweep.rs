use std::io::Write;

use super::{run_experiment, ExperimentConfig, Outcome};
use crate::algorithms::AlgorithmSpec;
use crate::collectives::TopologyKind;
use crate::engine::EngineOptions;
use crate::error::{Error, Result};
use crate::transport::Straggler;

/// A swept field. Network values apply to inter-node links, and to
/// intra-node links too when the cluster has a single node.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Bandwidth(Vec<f64>),
    Latency(Vec<f64>),
    Algorithm(Vec<String>),
    /// Compute slowdown of the last rank; 1 means no straggler.
    Straggler(Vec<f64>),
}

impl Axis {
    fn key(&self) -> &'static str {
        match self {
            Axis::Bandwidth(_) => "bandwidth",
            Axis::Latency(_) => "latency",
            Axis::Algorithm(_) => "algorithm",
            Axis::Straggler(_) => "straggler",
        }
    }

    fn len(&self) -> usize {
        match self {
            Axis::Bandwidth(v) | Axis::Latency(v) | Axis::Straggler(v) => v.len(),
            Axis::Algorithm(v) => v.len(),
        }
    }
}

/// Parses `--axis` arguments such as `bandwidth=1e8,1e10,latency=1e-4`.
/// A token with `=` starts a new axis; bare tokens extend the current one.
pub fn parse_axes(args: &[String]) -> Result<Vec<Axis>> {
    let mut raw: Vec<(String, Vec<String>)> = Vec::new();
    for arg in args {
        for token in arg.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token.split_once('=') {
                Some((key, value)) => raw.push((key.trim().to_string(), vec![value.trim().to_string()])),
                None => match raw.last_mut() {
                    Some((_, values)) => values.push(token.to_string()),
                    None => return Err(Error::config("axis", format!("value `{token}` has no axis name"))),
                },
            }
        }
    }
    let mut axes: Vec<Axis> = Vec::new();
    for (key, values) in raw {
        let numbers = || -> Result<Vec<f64>> {
            values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::config(format!("axis.{key}"), format!("`{v}` is not a number")))
                })
                .collect()
        };
        let axis = match key.as_str() {
            "bandwidth" => Axis::Bandwidth(numbers()?),
            "latency" => Axis::Latency(numbers()?),
            "straggler" => Axis::Straggler(numbers()?),
            "algorithm" => Axis::Algorithm(values.clone()),
            other => return Err(Error::config(format!("axis.{other}"), "unknown sweep axis")),
        };
        if axes.iter().any(|a| a.key() == axis.key()) {
            return Err(Error::config(format!("axis.{key}"), "axis given twice"));
        }
        axes.push(axis);
    }
    Ok(axes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: String,
    pub bandwidth: f64,
    pub latency: f64,
    pub straggler: f64,
    pub epoch_virtual_time: Option<f64>,
    pub bytes_per_epoch: f64,
    pub final_loss: f64,
}

fn algorithm_by_name(name: &str, base: &AlgorithmSpec) -> Result<AlgorithmSpec> {
    if base.name() == name {
        return Ok(*base);
    }
    let lr = base.lr();
    let random = TopologyKind::Random { seed: 0 };
    Ok(match name {
        "allreduce" => AlgorithmSpec::Allreduce { lr },
        "qsgd8" => AlgorithmSpec::Qsgd8 { lr, codec: None },
        "onebit_adam" => AlgorithmSpec::OnebitAdam {
            lr,
            warmup_steps: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            codec: None,
        },
        "decen32" => AlgorithmSpec::Decen32 { lr, topology: random },
        "decen8" => AlgorithmSpec::Decen8 {
            lr,
            topology: random,
            codec: None,
        },
        "async" => AlgorithmSpec::Async {
            lr,
            max_staleness: None,
            communication: true,
        },
        other => return Err(Error::config("axis.algorithm", format!("unknown algorithm `{other}`"))),
    })
}

fn apply(cfg: &mut ExperimentConfig, axis: &Axis, i: usize) -> Result<()> {
    let single_node = cfg.cluster.nodes == 1;
    let net = &mut cfg.cluster.network;
    match axis {
        Axis::Bandwidth(v) => {
            net.inter_node.bandwidth = v[i];
            if single_node {
                net.intra_node.bandwidth = v[i];
            }
        }
        Axis::Latency(v) => {
            net.inter_node.latency = v[i];
            if single_node {
                net.intra_node.latency = v[i];
            }
        }
        Axis::Straggler(v) => {
            net.straggler = (v[i] != 1.0).then(|| Straggler {
                rank: cfg.cluster.n_workers - 1,
                slowdown: v[i],
            });
        }
        Axis::Algorithm(v) => cfg.algorithm = algorithm_by_name(&v[i], &cfg.algorithm)?,
    }
    Ok(())
}

/// The part of a config that sweeping must not change.
fn fixed_part(cfg: &ExperimentConfig, axes: &[Axis]) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.output = None;
    for axis in axes {
        match axis {
            Axis::Bandwidth(_) => {
                c.cluster.network.inter_node.bandwidth = 1.0;
                c.cluster.network.intra_node.bandwidth = 1.0;
            }
            Axis::Latency(_) => {
                c.cluster.network.inter_node.latency = 0.0;
                c.cluster.network.intra_node.latency = 0.0;
            }
            Axis::Straggler(_) => c.cluster.network.straggler = None,
            Axis::Algorithm(_) => c.algorithm = AlgorithmSpec::Allreduce { lr: 0.0 },
        }
    }
    c
}

/// Runs the cartesian product of `axes` over every config. Configs may
/// differ only in swept fields.
pub fn sweep(configs: &[ExperimentConfig], axes: &[Axis]) -> Result<Vec<SweepRow>> {
    let Some(first) = configs.first() else {
        return Err(Error::config("sweep", "no configs given"));
    };
    let reference = fixed_part(first, axes);
    if configs[1..].iter().any(|c| fixed_part(c, axes) != reference) {
        return Err(Error::config("sweep", "configs differ outside the swept axes"));
    }
    if let Some(a) = axes.iter().find(|a| a.len() == 0) {
        return Err(Error::config(format!("axis.{}", a.key()), "no values"));
    }
    let combos: usize = axes.iter().map(Axis::len).product();
    let mut rows = Vec::new();
    for base in configs {
        for mut index in 0..combos {
            let mut cfg = base.clone();
            for axis in axes {
                apply(&mut cfg, axis, index % axis.len())?;
                index /= axis.len();
            }
            let out = run_experiment(&cfg)?;
            let net = &cfg.cluster.network;
            rows.push(SweepRow {
                algorithm: cfg.algorithm.name().to_string(),
                bandwidth: net.inter_node.bandwidth,
                latency: net.inter_node.latency,
                straggler: net.straggler.map_or(1.0, |s| s.slowdown),
                epoch_virtual_time: out.summary.epoch_virtual_time,
                bytes_per_epoch: out.summary.bytes_per_epoch,
                final_loss: out.summary.final_loss,
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "algorithm,bandwidth,latency,straggler,epoch_virtual_time,bytes_per_epoch,final_loss")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{},{:e},{:e}",
            r.algorithm,
            r.bandwidth,
            r.latency,
            r.straggler,
            opt(r.epoch_virtual_time),
            r.bytes_per_epoch,
            r.final_loss
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub overlap: bool,
    pub fusion: bool,
    pub hierarchical: bool,
    pub epoch_virtual_time: Option<f64>,
    pub bytes_per_epoch: f64,
    pub final_loss: f64,
    /// Final parameters bitwise equal to the run with every toggle off.
    pub same_params: bool,
}

/// Runs all eight overlap, fusion and hierarchical settings.
pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<(AblationRow, Outcome)>> {
    let mut out: Vec<(AblationRow, Outcome)> = Vec::with_capacity(8);
    for bits in 0..8u8 {
        let (overlap, fusion, hierarchical) = (bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let mut c = cfg.clone();
        c.optimizations = EngineOptions {
            overlap,
            fusion,
            hierarchical,
            ..cfg.optimizations
        };
        let outcome = run_experiment(&c)?;
        let same_params = out.first().map_or(true, |(_, base)| {
            bitwise_equal(&base.final_params, &outcome.final_params)
        });
        out.push((
            AblationRow {
                overlap,
                fusion,
                hierarchical,
                epoch_virtual_time: outcome.summary.epoch_virtual_time,
                bytes_per_epoch: outcome.summary.bytes_per_epoch,
                final_loss: outcome.summary.final_loss,
                same_params,
            },
            outcome,
        ));
    }
    Ok(out)
}

fn bitwise_equal(a: &[Vec<f32>], b: &[Vec<f32>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

pub fn write_ablation_csv(rows: &[AblationRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "overlap,fusion,hierarchical,epoch_virtual_time,bytes_per_epoch,final_loss,same_params")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:e},{:e},{}",
            r.overlap as u8,
            r.fusion as u8,
            r.hierarchical as u8,
            opt(r.epoch_virtual_time),
            r.bytes_per_epoch,
            r.final_loss,
            r.same_params
        )?;
    }
    Ok(())
}
