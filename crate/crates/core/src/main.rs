use std::process::ExitCode;

fn main() -> ExitCode {
    // Die quietly when stdout closes early (e.g. piped into `head`) instead
    // of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    ExitCode::from(logscope::cli::run(std::env::args()))
}
