//! `v2g`: batch clearing and simulation runs.
//!
//! Exit codes: 0 success, 2 invalid input, 3 I/O failure.

mod args;
mod commands;
mod error;
mod output;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Allocate(a) => commands::allocate_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
        Command::Balance(a) => commands::balance_cmd(a),
        Command::Report(a) => commands::report_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
