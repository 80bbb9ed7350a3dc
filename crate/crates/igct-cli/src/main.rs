use std::process::ExitCode;

fn main() -> ExitCode {
    igct_cli::run(std::env::args().skip(1))
}
