//! `nck-check trajectory.csv --suite full` is shorthand for `nck check ...`.

use clap::Parser;
use nck_cli::check::CheckArgs;
use nck_cli::{main_with, Cli, Command, Global};

#[derive(Debug, Parser)]
#[command(name = "nck-check", version, about = "Re-run the check suites on a persisted trajectory")]
struct Alias {
    #[command(flatten)]
    global: Global,
    #[command(flatten)]
    args: CheckArgs,
}

fn main() {
    let a = Alias::parse();
    std::process::exit(main_with(Cli { global: a.global, command: Command::Check(a.args) }));
}
