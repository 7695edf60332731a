use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdeinfo::cli::{self, EXIT_CHECK_FAILED, EXIT_PASS};

#[derive(Parser)]
#[command(name = "pdeinfo", version, about = "Fisher information and efficiency diagnostics for PDE regression models")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task in a config file and write its report to a directory.
    Run {
        /// TOML config, or JSON when the name ends in .json
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Check a config against the schema and print it resolved.
    Validate { config: PathBuf },
}

fn fail(e: &pdeinfo::Error) -> ExitCode {
    eprintln!("{}", cli::error_payload(e));
    ExitCode::from(cli::exit_code(e) as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let load = |path: &PathBuf| -> pdeinfo::Result<cli::ExperimentConfig> {
        let mut cfg = cli::load_config(path)?;
        cfg.apply_env()?;
        Ok(cfg)
    };
    match args.command {
        Command::Validate { config } => match load(&config).and_then(|c| cli::resolve(&c)) {
            Ok(c) => {
                println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { config, out, force } => {
            let report = match load(&config).and_then(|c| cli::run(&c, &out, force)) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            for c in &report.checks {
                let verdict = if c.pass { "pass" } else { "FAIL" };
                println!("{verdict}  {}: {:.6e} (target {:.6e}, tolerance {:.1e})", c.name, c.value, c.target, c.tolerance);
            }
            println!("{}: {}", report.task, if report.pass { "pass" } else { "FAIL" });
            ExitCode::from(if report.pass { EXIT_PASS } else { EXIT_CHECK_FAILED } as u8)
        }
    }
}
