use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(slimdt::cli::main() as u8)
}
