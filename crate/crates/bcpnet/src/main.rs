use std::process::ExitCode;

fn main() -> ExitCode {
    if let Ok(value) = std::env::var("BCP_THREADS") {
        match value.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is configured once");
            }
            _ => {
                eprintln!("error: BCP_THREADS must be a positive integer, got {value:?}");
                return ExitCode::from(bcpnet::cli::EXIT_USAGE as u8);
            }
        }
    }
    ExitCode::from(bcpnet::cli::run(std::env::args_os()) as u8)
}
