use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hullkam::io::{self, IoError, RunConfig, RunOutcome};

/// Quasi-periodic hull functions of long-range chains: solve, certify,
/// inspect residuals and sweep parameters.
#[derive(Parser)]
#[command(name = "hullkam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the quasi-Newton iteration from the zero hull and write the report,
    /// residual history and final hull.
    Solve(Common),
    /// Condition numbers, hypothesis margins and verification of a saved hull.
    Certify(WithHull),
    /// Residual of a saved hull.
    Residual(WithHull),
    /// Solve over the `[sweep]` values of the configuration.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides the HULLKAM_OUT_DIR variable and the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct WithHull {
    #[command(flatten)]
    common: Common,
    /// Hull file; defaults to the solve output in the output directory.
    #[arg(long, value_name = "PATH")]
    hull: Option<PathBuf>,
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), IoError> {
    let cfg = io::load_config(&common.config)?;
    let out = io::output_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

fn execute(command: &Command) -> Result<(RunOutcome, bool), IoError> {
    match command {
        Command::Solve(c) => {
            let (cfg, out) = load(c)?;
            Ok((io::run_solve(&cfg, &out)?, c.quiet))
        }
        Command::Sweep(c) => {
            let (cfg, out) = load(c)?;
            Ok((io::run_sweep(&cfg, &out)?, c.quiet))
        }
        Command::Certify(w) | Command::Residual(w) => {
            let (cfg, out) = load(&w.common)?;
            let hull = w.hull.clone().unwrap_or_else(|| out.join(&cfg.output.hull));
            let outcome = if matches!(command, Command::Certify(_)) {
                io::run_certify(&cfg, &hull, &out)?
            } else {
                io::run_residual(&cfg, &hull, &out)?
            };
            Ok((outcome, w.common.quiet))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok((outcome, quiet)) => {
            if !quiet {
                println!("{}", outcome.summary);
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
            match outcome.error {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
