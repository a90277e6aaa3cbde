use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isaacs_cli::{run_file, CheckName, RunOptions};

#[derive(Parser)]
#[command(
    name = "isaacs",
    version,
    about = "Value functions of stochastic differential games with reflected BSDE costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for every randomized check (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 or unset uses all cores.
        #[arg(long, env = "ISAACS_THREADS")]
        threads: Option<usize>,
        /// Check to run; repeatable, replaces the config's `checks`.
        #[arg(long = "check", value_parser = parse_check)]
        checks: Vec<CheckName>,
    },
}

fn parse_check(s: &str) -> Result<CheckName, String> {
    CheckName::parse(s).ok_or_else(|| {
        let names: Vec<_> = CheckName::ALL.iter().map(|c| c.as_str()).collect();
        format!(
            "unknown check '{s}' (expected one of: {})",
            names.join(", ")
        )
    })
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        seed,
        threads,
        checks,
    } = Cli::parse().command;
    let opts = RunOptions {
        out,
        seed,
        threads,
        checks: if checks.is_empty() {
            None
        } else {
            Some(checks)
        },
    };
    match run_file(&config, &opts) {
        Ok(outcome) => {
            for (name, pass) in &outcome.manifest.checks {
                println!("{name}: {}", if *pass { "pass" } else { "FAIL" });
            }
            if let Some(err) = &outcome.error {
                eprintln!("error: {err}");
            }
            println!(
                "manifest: {}",
                outcome.out_dir.join("manifest.json").display()
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
