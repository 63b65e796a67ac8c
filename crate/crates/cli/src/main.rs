mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dwsformer::Error),
}

impl CliError {
    /// 2 for bad input or usage, 3 when a computation fails numerically.
    fn exit_code(&self) -> u8 {
        use dwsformer::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Diverged { .. } | E::Tensor(_) | E::Optimizer(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(dwsformer::Error::Diverged {
                last_good: Some(p), ..
            }) = &e
            {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
