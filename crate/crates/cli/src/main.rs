//! `flchain`: queue, confirmation-latency and federated-training experiments
//! driven by scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flchain_core::des::{self, DesConfig, Horizon};
use flchain_core::fl;
use flchain_core::scenario::{self, CsvTable, Scenario, ScenarioError};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "flchain", version, about = "Performance models for blockchain-backed federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; every key is optional.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory, overriding `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding `run.seeds` with consecutive seeds from this one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytical queue delay over the sweep grid.
    QueueAnalyze(Common),
    /// Analytical queue delay next to the discrete-event simulator.
    QueueSimulate {
        #[command(flatten)]
        common: Common,
        /// Also write an event trace of this many arrivals for the base scenario.
        #[arg(long)]
        trace: Option<u64>,
    },
    /// Transaction confirmation latency over mining rate and P2P capacity.
    ConfirmationSweep(Common),
    /// Synchronous versus asynchronous training over clients and block fraction.
    FlchainRun(Common),
    /// Iteration delay of the standard model sizes.
    ModelDelays(Common),
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

struct Context {
    scenario: Scenario,
    out: PathBuf,
}

impl Context {
    fn load(common: &Common) -> Result<Self, CliError> {
        let mut scenario = match &common.scenario {
            Some(path) => scenario::load_scenario(path)?,
            None => scenario::load_scenario_str("", std::env::vars())?,
        };
        if let Some(seed) = common.seed {
            let n = scenario.run.seeds.len() as u64;
            scenario.run.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        }
        let out = common.out.clone().unwrap_or_else(|| scenario.run.output_dir.clone());
        fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        Ok(Self { scenario, out })
    }

    fn seed(&self) -> u64 {
        self.scenario.run.seeds[0]
    }

    fn write_table(&self, name: &str, table: &CsvTable) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        table.write_to(std::io::BufWriter::new(file))?;
        println!("wrote {} ({} rows)", path.display(), table.rows.len());
        Ok(path)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::QueueAnalyze(common) => {
            let ctx = Context::load(&common)?;
            let table = scenario::run_queue_sweep(&ctx.scenario, ctx.seed(), false)?;
            ctx.write_table("queue_analysis.csv", &table)?;
        }
        Command::QueueSimulate { common, trace } => {
            let ctx = Context::load(&common)?;
            let table = scenario::run_queue_sweep(&ctx.scenario, ctx.seed(), true)?;
            ctx.write_table("queue_simulation.csv", &table)?;
            if let Some(arrivals) = trace {
                let q = ctx.scenario.queue_params().map_err(ScenarioError::from)?;
                let cfg = DesConfig { warmup: 0.0, ..DesConfig::new(q, Horizon::Arrivals(arrivals), ctx.seed()) };
                let path = ctx.out.join("des_trace.csv");
                let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                let mut w = std::io::BufWriter::new(file);
                des::run_traced(&cfg, &mut w).map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("wrote {}", path.display());
            }
        }
        Command::ConfirmationSweep(common) => {
            let ctx = Context::load(&common)?;
            let table = scenario::run_confirmation_sweep(&ctx.scenario, ctx.seed())?;
            ctx.write_table("confirmation_sweep.csv", &table)?;
        }
        Command::FlchainRun(common) => {
            let ctx = Context::load(&common)?;
            let cmp = scenario::run_flchain_comparison(&ctx.scenario)?;
            println!("efficiency in accuracy per second on the synthetic Gaussian-mixture task (not EMNIST)");
            ctx.write_table("efficiency_synthetic.csv", &cmp.efficiency)?;
            let dir = ctx.out.join("trajectories");
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            for (name, records) in &cmp.trajectories {
                let path = dir.join(format!("{name}.csv"));
                let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                let mut w = std::io::BufWriter::new(file);
                fl::write_trajectory(records, &mut w).map_err(|e| io_err(&path, e))?;
            }
            println!("wrote {} trajectories under {}", cmp.trajectories.len(), dir.display());
            if !cmp.failures.is_empty() {
                for f in &cmp.failures {
                    eprintln!("cell failed: {f}");
                }
                return Err(CliError::Runtime(format!("{} cells failed", cmp.failures.len())));
            }
        }
        Command::ModelDelays(common) => {
            let ctx = Context::load(&common)?;
            let table = scenario::model_size_delay_report(&ctx.scenario, ctx.seed(), &scenario::standard_presets())?;
            ctx.write_table("model_delays.csv", &table)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
