use std::process::ExitCode;

fn main() -> ExitCode {
    specbias::cli::main_with(std::env::args_os())
}
