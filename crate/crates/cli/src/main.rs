use std::process::ExitCode;

use clap::Parser;

use labelsynth_cli::commands::{self, Cli, Command, EvalCommand, IndexCommand};
use labelsynth_cli::service;

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Index(IndexCommand::Build { data, out }) => commands::index_build(&data, &out),
        Command::Toygen(args) => commands::toygen(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Eval(EvalCommand::SelfRecon(args)) => commands::eval(&args, false),
        Command::Eval(EvalCommand::Report(args)) => commands::eval(&args, true),
        Command::Serve(args) => service::serve(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
