use std::process::ExitCode;

fn main() -> ExitCode {
    ossmc_cli::run_cli()
}
