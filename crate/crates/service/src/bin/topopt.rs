use std::process::ExitCode;

fn main() -> ExitCode {
    topopt_service::cli::main_with_args(std::env::args_os())
}
