use std::process::ExitCode;

use clap::Parser;
use retinexdual_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
