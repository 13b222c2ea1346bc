use std::process::ExitCode;

fn main() -> ExitCode {
    conure::cli::main_with_args(std::env::args_os())
}
