use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssac::cli_io::commands::{self, CommandError, CommonArgs};
use ssac::mdp::RandomMdpSpec;

#[derive(Parser)]
#[command(name = "ssac", version, about = "Single-sample actor-critic with exact oracle diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds (overrides `n_seeds`).
    #[arg(long)]
    seeds: Option<usize>,
    /// Dotted-path assignment applied to the config, e.g. `ac.total_steps=1000`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs { config: c.config, out: c.out, seeds: c.seeds, overrides: c.overrides }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the oracle on the θ grid and check the standing assumptions.
    Oracle(Common),
    /// Run the actor-critic for each seed.
    Run(Common),
    /// Fit rates and evaluate the bound for a set of run logs.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Run logs (CSV or JSON summary).
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Run every point of a config grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis `KEY=V1,V2,...`; repeat for a cartesian product.
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
    },
    /// Write a random MDP instance as JSON.
    GenMdp {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cmd: Command) -> Result<(), CommandError> {
    match cmd {
        Command::Oracle(c) => {
            let o = commands::cmd_oracle(&c.into())?;
            println!("{}", o.report_path.display());
            println!("{}", o.grid_path.display());
        }
        Command::Run(c) => {
            for p in commands::cmd_run(&c.into())? {
                println!("{}", p.display());
            }
        }
        Command::Analyze { common, logs } => {
            let o = commands::cmd_analyze(&common.into(), &logs)?;
            println!("{}", o.report_path.display());
        }
        Command::Sweep { common, grid } => {
            for e in commands::cmd_sweep(&common.into(), &grid)? {
                println!("{} {}", e.dir, e.assignments.join(" "));
            }
        }
        Command::GenMdp { states, actions, gamma, seed, concentration, out } => {
            let mut spec = RandomMdpSpec::new(states, actions, gamma, seed);
            spec.concentration = concentration;
            commands::cmd_gen_mdp(&spec, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
