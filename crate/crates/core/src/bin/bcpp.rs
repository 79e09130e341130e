use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = std::env::var("BCPP_SEED").ok();
    let code = bcpp::shell::dispatch(&args, seed.as_deref());
    ExitCode::from(code as u8)
}
