use clap::Parser;

use frechet_cli::Cli;

fn main() {
    let cli = Cli::parse();
    std::process::exit(frechet_cli::run(&cli));
}
