//! `eds` command-line entry point.

mod cli;
mod commands;
mod error;

use clap::Parser;

fn main() {
    let args = cli::Cli::parse();
    if let Err(e) = commands::run(args.command) {
        eprintln!("{}", e.report_line());
        std::process::exit(1);
    }
}
