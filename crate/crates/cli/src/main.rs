use std::process::ExitCode;

fn main() -> ExitCode {
    match noised_topk_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("noised-topk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
