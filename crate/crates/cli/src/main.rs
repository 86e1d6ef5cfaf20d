mod args;
mod artifacts;
mod commands;
mod error;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use artifacts::resolve_out_dir;
use commands::Outcome;
use error::{CliError, CliResult};

fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::input("--threads", "", "must be at least 1"));
        }
        // Ignored if a pool already exists; the results do not depend on it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let out = resolve_out_dir(cli.out_dir.as_deref());
    match &cli.command {
        Command::CheckWeight(a) => commands::check_weight(a, out),
        Command::CheckConditions(a) => commands::check_conditions(a, out),
        Command::Simulate(a) => commands::simulate(a, out),
        Command::VerifyMoments(a) => commands::verify_moments(a, out),
        Command::VerifyHeatkernel(a) => commands::verify_heatkernel(a, out),
        Command::Hitting(a) => commands::hitting(a, out),
        Command::Potentials(a) => commands::potentials(a, out),
        Command::Oracle(c) => commands::oracle(c, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(outcome) => {
            let text = serde_json::to_string_pretty(&outcome.summary).expect("summaries serialize");
            // A closed pipe is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::from(if outcome.pass { 0 } else { 1 })
        }
        Err(e) => {
            let text = serde_json::to_string_pretty(&e.to_json()).expect("errors serialize");
            let _ = writeln!(std::io::stderr(), "{text}");
            ExitCode::from(e.exit_code())
        }
    }
}
