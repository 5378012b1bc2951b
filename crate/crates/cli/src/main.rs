use std::io::Write;

use clap::Parser;

fn main() {
    let cli = acca_cli::Cli::parse();
    match acca_cli::run(cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                // a closed pipe downstream is not an error
                let _ = writeln!(std::io::stdout(), "{}", msg.trim_end());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(acca_cli::exit_code(&e));
        }
    }
}
