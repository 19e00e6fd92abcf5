use std::process::ExitCode;

fn main() -> ExitCode {
    biasbench::cli::main_with_args(std::env::args_os())
}
