mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;
use config::{Cli, Command};
use serde_json::json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Cv(a) => commands::cv(a),
        Command::Select(a) => commands::select(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} error entries in output");
            ExitCode::from(2)
        }
        Err(e) => {
            let report = json!({
                "schema_version": output::SCHEMA_VERSION,
                "error": format!("{e}"),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
