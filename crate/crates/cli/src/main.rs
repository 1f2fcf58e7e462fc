use std::process::ExitCode;

use clap::Parser;
use nanosim_cli::{execute, Cli};

fn main() -> ExitCode {
    let level = std::env::var("NANOSIM_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nanosim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
