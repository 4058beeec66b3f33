mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp_secs()
        .init();
    let root = commands::data_root(cli.data_root.as_ref());
    let result = match &cli.command {
        Command::Dataset(a) => commands::dataset(a, root),
        Command::Fixture(a) => commands::fixture(a),
        Command::Train(a) => commands::run_train(a, root),
        Command::Eval(a) => commands::eval(a, root),
        Command::Sample(a) => commands::sample(a, root),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::MnistSanity(a) => commands::mnist(a, root),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
