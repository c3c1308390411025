use std::process::ExitCode;

fn main() -> ExitCode {
    diff2ct::cli::run(std::env::args_os())
}
