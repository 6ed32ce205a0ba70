use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skyfed_cli::{cmd_bench_zk, cmd_optimize, cmd_simulate, Arms, CliError, RunConfig};
use skyfed_core::sca::Baseline;

#[derive(Parser)]
#[command(
    name = "skyfed",
    version,
    about = "UAV-assisted federated learning: planning, twin sync and verifiable aggregation"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    None,
    FixedTraj,
    FixedAlloc,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::None => Baseline::None,
            BaselineArg::FixedTraj => Baseline::FixedTraj,
            BaselineArg::FixedAlloc => Baseline::FixedAlloc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plan trajectory, frequencies and powers for one round.
    Optimize {
        #[arg(long, value_enum, default_value = "none")]
        baseline: BaselineArg,
        /// Plan without twin feedback, using a guard band instead.
        #[arg(long)]
        no_dt: bool,
    },
    /// Run federated training, optionally with a poisoning client.
    Simulate {
        #[arg(long)]
        protected: bool,
        #[arg(long)]
        unprotected: bool,
        #[arg(long)]
        attack: bool,
    },
    /// Measure proof size and timing per model dimension.
    BenchZk {
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Optimize { baseline, no_dt } => {
            let s = cmd_optimize(&cfg, baseline.into(), no_dt)?;
            println!(
                "energy {:.6} J, latency {:.3} s, {} outer iterations, {} twin events",
                s.realized_energy_j, s.realized_latency_s, s.outer_iterations, s.twin_events
            );
        }
        Command::Simulate {
            protected,
            unprotected,
            attack,
        } => {
            let s = cmd_simulate(&cfg, Arms::from_flags(protected, unprotected), attack)?;
            for a in &s.arms {
                println!(
                    "{}: accuracy {:.4}, rejections {}",
                    if a.protected { "protected" } else { "unprotected" },
                    a.final_accuracy,
                    a.rejections
                );
            }
        }
        Command::BenchZk { dims, rounds } => {
            for r in cmd_bench_zk(&cfg, dims.as_deref(), rounds)? {
                println!(
                    "d={} overhead {} B ({:.4}%), gen {:.3} ms, verify {:.3} ms",
                    r.dim, r.overhead_bytes, r.overhead_pct, r.gen_ms_mean, r.verify_ms_mean
                );
            }
        }
        Command::PrintConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
