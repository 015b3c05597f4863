use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::{
    cmd_audit, cmd_converge, cmd_probe, cmd_run, parse_grid_list, resolve_out_dir, CliError, RunOptions,
    DEFAULT_MODES, DEFAULT_SEED, EXIT_OK,
};
use clap::{Args, Parser, Subcommand};

/// Forwarding controller synthesis and simulation for ODE / transport-PDE
/// cascades.
///
/// Exit codes: 0 success, 1 I/O error, 2 invalid configuration,
/// 3 assumption check failed, 4 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "cascade-forward", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (default: $CASCADE_FORWARD_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue when the assumption check fails.
    #[arg(long)]
    force: bool,
    /// Warn about unknown keys instead of rejecting them.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check, synthesize, simulate and audit one scenario.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Seed for the randomized audits.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Flip the feedback sign (audit test hook).
        #[arg(long)]
        sabotage: bool,
        /// Probe eigenmodes -K..=K.
        #[arg(long, default_value_t = DEFAULT_MODES)]
        modes: usize,
        /// Comma-separated times for profile.txt.
        #[arg(long, value_delimiter = ',')]
        profile: Vec<f64>,
    },
    /// Observed convergence orders over nested grids.
    Converge {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "100,200,400")]
        grids: String,
    },
    /// Re-run the decay audit from a trace CSV and a controller export.
    Audit {
        /// Directory holding trace.csv and controller.txt.
        dir: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        controller: Option<PathBuf>,
    },
    /// Observability table over eigenmodes of the transport generator.
    Probe {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_MODES)]
        modes: usize,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, common, seed, sabotage, modes, profile } => {
            let mut opts = RunOptions::new(resolve_out_dir(common.out));
            opts.force = common.force;
            opts.lenient = common.lenient;
            opts.seed = seed;
            opts.sabotage = sabotage;
            opts.modes = modes;
            opts.profile_times = profile;
            let outcome = cmd_run(&scenario, &opts)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for a in &outcome.audits {
                println!("{a}");
            }
            println!("wrote {}", opts.out.display());
        }
        Command::Converge { scenario, common, grids } => {
            let grids = parse_grid_list(&grids)?;
            let out = resolve_out_dir(common.out);
            print!("{}", cmd_converge(&scenario, &grids, &out, common.lenient, common.force)?);
        }
        Command::Audit { dir, trace, controller } => {
            let dir = dir.unwrap_or_else(|| resolve_out_dir(None));
            let trace = trace.unwrap_or_else(|| dir.join("trace.csv"));
            let controller = controller.unwrap_or_else(|| dir.join("controller.txt"));
            println!("{}", cmd_audit(&trace, &controller)?);
        }
        Command::Probe { scenario, common, modes } => {
            let out = resolve_out_dir(common.out);
            let (probe, csv) = cmd_probe(&scenario, modes, &out, common.lenient, common.force)?;
            print!("{csv}");
            println!("{}", probe.note);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
