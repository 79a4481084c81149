use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qharm_cli::{plots, run_config_file, verify, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "qharm", version, about = "Q-valued harmonic map experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario described by a TOML config into a new run directory.
    Run {
        config: PathBuf,
        /// Parent directory for run-NNNN (default: output.dir beside the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record the start time in the report (breaks byte-identical reruns).
        #[arg(long)]
        timestamps: bool,
    },
    /// Re-emit CSV plot data for a stored run.
    Plots { run_dir: PathBuf },
    /// Re-check stored snapshots of a run against its report.
    Verify { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_checks(checks: &[qharm_cli::report::Check]) -> usize {
    for c in checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().filter(|c| !c.passed).count()
}

fn exec(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { config, out, timestamps } => {
            let o = run_config_file(&config, &RunOptions { out, timestamps })?;
            println!("{}", o.dir.display());
            let failed = print_checks(&o.report.checks);
            if failed > 0 {
                return Err(CliError::Checks(failed));
            }
        }
        Cmd::Plots { run_dir } => {
            let (dir, files) = plots::replot(&run_dir)?;
            for f in files {
                println!("{}", dir.join(f).display());
            }
        }
        Cmd::Verify { run_dir } => {
            let failed = print_checks(&verify::verify_run(&run_dir)?);
            if failed > 0 {
                return Err(CliError::Checks(failed));
            }
        }
    }
    Ok(())
}
