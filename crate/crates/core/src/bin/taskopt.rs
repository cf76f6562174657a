use std::process::ExitCode;

fn main() -> ExitCode {
    taskopt::cli::run(std::env::args_os())
}
