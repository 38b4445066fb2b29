use std::process::ExitCode;

fn main() -> ExitCode {
    match cafed_sim::harness::run_cli(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({ "error": err.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
