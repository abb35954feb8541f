use std::process::ExitCode;

use clap::Parser;

use confdim_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(confdim_cli::run(&cli))
}
