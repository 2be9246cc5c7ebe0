use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hilbert_diffuse_cli::{run, Command, Request};

/// Runs one experiment on a scenario file.
///
/// Exit status: 0 when every checked property holds, 2 when some probe saw
/// no hits (inconclusive), 1 on a failed check or any error.
#[derive(Debug, Parser)]
#[command(name = "hilbert-diffuse", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for report.json and CSV artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's seed and HD_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // usage errors share the failure code; 2 means inconclusive here
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = run(&Request {
        command: args.command,
        scenario: args.scenario,
        out: args.out,
        seed: args.seed,
        jobs: args.jobs.map(usize::from),
    });
    ExitCode::from(code as u8)
}
