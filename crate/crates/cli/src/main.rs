use std::path::PathBuf;
use std::process::ExitCode;

use aoii_cli::{run, Command, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aoii", version, about = "AoII-optimal transmission under a rate budget over HARQ")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the rate-constrained problem for `budget.rate`
    Solve(Args),
    /// Solve and simulate every budget in `budget.grid`
    Sweep(Args),
    /// Simulate `policy`, or the optimal policy for `budget.rate`
    Simulate(Args),
    /// Cross-check the analytic solver against value iteration
    Validate(Args),
    /// Average AoII of the never-transmit policy
    WaitAoii(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output file (overrides `output.path`)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Simulation seed (overrides `sim.seed`)
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Simulation replications (overrides `sim.n_reps`)
    #[arg(long, value_name = "N")]
    reps: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::WaitAoii(a) => (Command::WaitAoii, a),
    };
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        reps: args.reps,
    };
    match run(command, &args.config, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aoii: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
