use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

mod args;
mod commands;
mod output;

use args::{Cli, Command, ConfigFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] sahash::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(sahash::Error::InvalidArgument(_)) => 1,
            CliError::Core(sahash::Error::NonFinite { .. }) => 3,
            CliError::Data(_) | CliError::Core(_) => 2,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Graph(a) => commands::graph(&a, &file),
        Command::Train(a) => commands::train(&a, &file),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
