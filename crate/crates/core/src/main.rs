use std::process::ExitCode;

fn main() -> ExitCode {
    match depd::cli::main_with_args(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("depd: {e}");
            ExitCode::FAILURE
        }
    }
}
