use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use relaxcomm::runner::{
    ablate, parse_axes, run_experiment, run_rank, sweep, write_ablation_csv, write_outputs, write_sweep_csv,
    ExperimentConfig, Outcome, CONNECT_TIMEOUT,
};
use relaxcomm::transport::{Backend, TcpEndpoint, Transport};
use relaxcomm::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Run data-parallel training experiments on a simulated or TCP cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// This process's rank in a multi-process tcp run.
        #[arg(long, requires_all = ["n_workers", "peers"])]
        rank: Option<usize>,
        #[arg(long)]
        n_workers: Option<usize>,
        /// Comma-separated `host:port` of every rank, in rank order.
        #[arg(long, value_delimiter = ',')]
        peers: Option<Vec<SocketAddr>>,
    },
    /// Run configs over the cartesian product of the given axes.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// `bandwidth=..`, `latency=..`, `algorithm=..` or `straggler=..`
        /// with comma-separated values; repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run all eight overlap, fusion and hierarchical settings.
    Ablate {
        config: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            output,
            rank,
            n_workers,
            peers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let dir = output.or_else(|| cfg.output.clone());
            let outcome = match rank {
                Some(rank) => {
                    let peers = peers.unwrap_or_default();
                    let n = n_workers.unwrap_or(peers.len());
                    if peers.len() != n {
                        return Err(Error::config("peers", format!("{} addresses for {n} workers", peers.len())));
                    }
                    cfg.cluster.backend = Backend::Tcp;
                    cfg.cluster.n_workers = n;
                    cfg.cluster.addresses = peers.clone();
                    cfg.validate()?;
                    let layout = cfg.cluster.layout()?;
                    let ep: Arc<dyn Transport> = Arc::new(TcpEndpoint::connect(rank, &peers, layout, CONNECT_TIMEOUT)?);
                    let out = run_rank(&cfg, Arc::clone(&ep));
                    ep.close();
                    match out? {
                        Some(outcome) => outcome,
                        None => return Ok(()),
                    }
                }
                None => run_experiment(&cfg)?,
            };
            report(&outcome, dir.as_deref())
        }
        Command::Sweep { configs, axes, output } => {
            let configs = configs
                .iter()
                .map(ExperimentConfig::load)
                .collect::<Result<Vec<_>>>()?;
            let axes = parse_axes(&axes)?;
            let rows = sweep(&configs, &axes)?;
            with_output(output.as_deref(), |mut w| write_sweep_csv(&rows, &mut w))
        }
        Command::Ablate { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows: Vec<_> = ablate(&cfg)?.into_iter().map(|(row, _)| row).collect();
            with_output(output.as_deref(), |mut w| write_ablation_csv(&rows, &mut w))
        }
    }
}

fn report(outcome: &Outcome, dir: Option<&Path>) -> Result<()> {
    match dir {
        Some(dir) => write_outputs(outcome, dir)?,
        None => {
            let text = serde_json::to_string_pretty(&outcome.summary).map_err(io::Error::from)?;
            println!("{text}");
        }
    }
    Ok(())
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}
