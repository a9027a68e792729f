use std::io::Write;
use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    let status = panic::catch_unwind(|| {
        let stdout = std::io::stdout();
        let stderr = std::io::stderr();
        let mut out = stdout.lock();
        let mut err = stderr.lock();
        let code = stylekit::cli::run(std::env::args_os(), &mut out, &mut err);
        let _ = out.flush();
        code
    })
    .unwrap_or(2);
    ExitCode::from(status as u8)
}
