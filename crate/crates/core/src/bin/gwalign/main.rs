//! Command-line interface: synthetic data, distance matrices, OT/GW solvers,
//! amortized training and inference, evaluation, and a timing/memory bench.
//!
//! Exit codes: 0 success, 1 usage/input error, 2 numerical failure.

mod cmds;

use std::process::ExitCode;

use clap::Parser;

use gwalign::GwError;

#[derive(Parser)]
#[command(
    name = "gwalign",
    version,
    about = "Align metric-measure spaces: entropic GW solvers and an amortized, inductive solver"
)]
struct Cli {
    /// Seed for all randomized steps of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: cmds::Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code conventions differ; map all usage errors to 1,
            // except help/version which are success.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match cmds::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_numerical(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_numerical(e: &GwError) -> bool {
    e.is_numerical()
}
