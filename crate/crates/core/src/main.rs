use std::process::ExitCode;

use clap::Parser;

use bccp::{Error, ErrorClass};

mod cli;

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::class);
    match class {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Numerical) => 4,
        // csv and io failures outside the library's own checks are input problems
        None if err.chain().any(|e| e.is::<csv::Error>()) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = cli::Cli::parse();
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
