use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lkstab_cli::{
    cmd_analyze, cmd_fluid, cmd_simulate, cmd_statediagram, load, CliError, Outcome, Overrides,
    Scenario,
};

#[derive(Parser)]
#[command(name = "lkstab", version, about = "Fluid and simulation tools for multiclass queueing networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static quantities, utilization and applicability of the stability results.
    Analyze(Common),
    /// Fluid trajectory under LQ or LDQ.
    Fluid(Common),
    /// Discrete-event simulation with an instability test.
    Simulate(Common),
    /// Maxima-state diagram and the no-loop check.
    Statediagram(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: lu-kumar-lq, ldq-acyclic, ldq-cycle, priority-unstable.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory, overriding `outputs.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed, overriding `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Random initial conditions for the no-loop check.
    #[arg(long)]
    samples: Option<usize>,
}

type Handler = fn(&Scenario) -> Result<Outcome, CliError>;

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (common, f): (Common, Handler) = match cli.command {
        Command::Analyze(c) => (c, cmd_analyze),
        Command::Fluid(c) => (c, cmd_fluid),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Statediagram(c) => (c, cmd_statediagram),
    };
    let doc = load(common.scenario.as_deref(), common.preset.as_deref())?;
    let ov = Overrides {
        out: common.out,
        seed: common.seed,
        jobs: common.jobs,
        samples: common.samples,
    };
    f(&Scenario::new(doc, &ov)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{}", out.report);
            ExitCode::SUCCESS
        }
        Err(CliError::Property(report)) => {
            print!("{report}");
            eprintln!("error: property violated");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
