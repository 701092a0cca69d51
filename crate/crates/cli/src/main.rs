use std::io::Write as _;

use clap::Parser;

use cablegraph_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Err(e) => {
            let body = serde_json::json!({ "error": e.report() });
            eprintln!("{body}");
            std::process::exit(1);
        }
    }
}
