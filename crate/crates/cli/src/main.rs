//! `fairway`: scenario-driven front end for the allocator, stationary laws
//! and simulators.
//!
//! Exit codes: 0 success, 1 invalid input (scenario, flags, network
//! validation), 2 runtime failure (solver, unstable load).

mod commands;
mod output;
mod scenario;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairway_core::motorway::{Mode, Policy};

use crate::commands::Report;
use crate::output::{Format, Sink};
use crate::scenario::{Invalid, Scenario};

#[derive(Parser)]
#[command(name = "fairway", version, about = "Proportionally fair ramp metering and bandwidth sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for CSV series and JSON summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides sim.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications (overrides sim.replications).
    #[arg(long)]
    replications: Option<u64>,
    /// pf | upstream | downstream (overrides the scenario policy).
    #[arg(long)]
    policy: Option<Policy>,
    /// brownian | jobs (overrides the scenario mode).
    #[arg(long)]
    mode: Option<Mode>,
    /// Series format; summaries are always JSON.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Proportionally fair allocation for connection counts n.
    Allocate {
        #[command(flatten)]
        common: Common,
        /// Connection counts, comma separated (overrides "n").
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<f64>>,
    },
    /// Stationary law of the motorway, flow or route-choice model.
    Stationary {
        #[command(flatten)]
        common: Common,
    },
    /// Metered motorway simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Connection-level Markov chain simulation.
    Ctmc {
        #[command(flatten)]
        common: Common,
    },
    /// Fluid model integration.
    Fluid {
        #[command(flatten)]
        common: Common,
    },
    /// Single-server queue laboratory (mm1, ps, rbm).
    Queue {
        #[command(flatten)]
        common: Common,
    },
    /// Parallel roads with route choice.
    RouteChoice {
        #[command(flatten)]
        common: Common,
    },
    /// Several metering policies on the same arrival stream.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Allocate { common, .. }
            | Self::Stationary { common }
            | Self::Simulate { common }
            | Self::Ctmc { common }
            | Self::Fluid { common }
            | Self::Queue { common }
            | Self::RouteChoice { common }
            | Self::Compare { common } => common,
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<(Scenario, Sink)> {
    let mut sc = Scenario::load(&common.scenario)?;
    if let Some(seed) = common.seed {
        sc.sim_mut().seed = Some(seed);
    }
    if let Some(r) = common.replications {
        sc.sim_mut().replications = Some(r);
    }
    if let Some(p) = common.policy {
        sc.policy = Some(p);
    }
    if let Some(m) = common.mode {
        sc.mode = Some(m);
    }
    let dir = common.out.clone().or_else(|| sc.output.as_ref().and_then(|o| o.dir.clone()));
    Ok((sc, Sink { dir, format: common.format }))
}

fn run(command: Command) -> anyhow::Result<Report> {
    let (sc, sink) = resolve(command.common())?;
    match command {
        Command::Allocate { n, .. } => commands::allocate_cmd(&sc, n, &sink),
        Command::Stationary { .. } => commands::stationary_cmd(&sc, &sink),
        Command::Simulate { .. } => commands::simulate_cmd(&sc, &sink),
        Command::Ctmc { .. } => commands::ctmc_cmd(&sc, &sink),
        Command::Fluid { .. } => commands::fluid_cmd(&sc, &sink),
        Command::Queue { .. } => commands::queue_cmd(&sc, &sink),
        Command::RouteChoice { .. } => commands::route_choice_cmd(&sc, &sink),
        Command::Compare { .. } => commands::compare_cmd(&sc, &sink),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<Invalid>()) {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<fairway_core::Error>()) {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let printed = match run(cli.command) {
        Ok(Report::Json(v)) => emit(&format!("{}\n", serde_json::to_string_pretty(&v).expect("summary serialises"))),
        Ok(Report::Text(t)) => emit(&t),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    match printed {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: writing stdout: {e}");
            ExitCode::from(2)
        }
    }
}

fn emit(text: &str) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()
}
