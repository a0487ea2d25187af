use std::process::ExitCode;

use clap::Parser;
use hyperkid::cli::{execute, Cli};

fn main() -> ExitCode {
    execute(&Cli::parse())
}
