use clap::Parser;

fn main() {
    std::process::exit(heatsc_cli::run(heatsc_cli::Cli::parse()));
}
