use clap::Parser;

fn main() -> std::process::ExitCode {
    hrrl::cli::run(hrrl::cli::Cli::parse())
}
