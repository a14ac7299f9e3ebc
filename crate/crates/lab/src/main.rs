use clap::Parser;

use catapult_lab::cli::Cli;
use catapult_lab::commands::run;
use catapult_lab::error::{EXIT_DIVERGED, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            std::process::exit(if outcome.diverged { EXIT_DIVERGED } else { EXIT_OK });
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", serde_json::json!({"status": "error", "message": e.to_string()}));
            std::process::exit(e.exit_code());
        }
    }
}
