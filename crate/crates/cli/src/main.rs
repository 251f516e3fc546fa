use clap::Parser;

use disco_cli::cli::{execute, Cli};
use disco_cli::EXIT_OK;

fn main() {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            std::process::exit(EXIT_OK);
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
