use std::io::stdout;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = dtstab::cli::run_command(std::env::args_os(), &mut stdout().lock());
    ExitCode::from(code as u8)
}
