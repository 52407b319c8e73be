mod args;
mod commands;
mod failure;
mod files;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::CmdResult;

fn configure_threads(cli: &Cli) -> CmdResult {
    let threads = if cli.single_thread {
        Some(1)
    } else {
        cli.threads.map(|t| t as usize)
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| failure::Failure::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    configure_threads(cli)?;
    match &cli.command {
        Command::Build(a) => commands::build(a),
        Command::Stats(a) => commands::stats(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
        Command::Synth(a) => commands::synth(a),
        Command::Lowres(a) => commands::lowres(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
