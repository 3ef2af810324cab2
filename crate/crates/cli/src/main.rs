mod cli;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use nbdf_core::parallel::{set_threads, ExecMode};

use cli::{Cli, Command, DiagnoseCommand};

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let exec = if cli.deterministic {
        set_threads(1).map_err(anyhow::Error::msg)?;
        ExecMode::Sequential
    } else {
        if let Some(n) = cli.threads {
            set_threads(n).map_err(anyhow::Error::msg)?;
        }
        ExecMode::Parallel
    };
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Mix(a) => commands::mix(a, exec),
        Command::Train(a) => commands::train(a, exec),
        Command::Enhance(a) => commands::enhance(a, exec),
        Command::Eval(a) => commands::eval(a, exec),
        Command::Diagnose(DiagnoseCommand::Msecurve(a)) => commands::msecurve(a, exec),
        Command::Diagnose(DiagnoseCommand::Smoothness(a)) => commands::smoothness(a, exec),
        Command::Diagnose(DiagnoseCommand::Params(a)) => commands::params(a),
        Command::Gradcheck(a) => return commands::gradcheck(a),
    }?;
    Ok(ExitCode::SUCCESS)
}
