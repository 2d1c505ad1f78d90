use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(semrob_cli::run(std::env::args_os()))
}
