use std::process::ExitCode;

fn main() -> ExitCode {
    match gradcert::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradcert: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
