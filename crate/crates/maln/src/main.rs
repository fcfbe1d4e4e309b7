use maln::cli;

fn main() {
    let outcome = cli::run(std::env::args_os());
    if let Some(d) = outcome.diagnostic {
        eprintln!("{}", serde_json::json!({ "error": d.error, "message": d.message }));
    }
    std::process::exit(outcome.exit_code);
}
