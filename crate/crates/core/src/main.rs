use std::process::ExitCode;

use clap::Parser;
use oavat::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(m) => {
            println!("{} output files hashed into the manifest", m.outputs.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
