mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use arn::{DatasetError, VisionError};
use clap::{Parser, Subcommand};

use crate::commands::SweepAxis;
use crate::config::Overrides;

#[derive(Parser)]
#[command(
    name = "arn",
    version,
    about = "Train and inspect auto resonance networks on MNIST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write the model file.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a model on the held-out set and write the confusion matrix.
    Eval {
        #[arg(long, short)]
        model: std::path::PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and evaluate once per value of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Explain the recognition of one test image.
    Trace {
        #[arg(long, short)]
        model: std::path::PathBuf,
        /// Index into the test set.
        #[arg(long)]
        index: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    State,
}

impl ErrorKind {
    fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::State => 4,
        }
    }
}

/// An error tagged with the exit class it maps to.
#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    inner: anyhow::Error,
}

impl CliError {
    pub fn io(inner: anyhow::Error) -> anyhow::Error {
        Self {
            kind: ErrorKind::Io,
            inner,
        }
        .into()
    }

    pub fn state(inner: anyhow::Error) -> anyhow::Error {
        Self {
            kind: ErrorKind::State,
            inner,
        }
        .into()
    }

    pub fn config(inner: anyhow::Error) -> anyhow::Error {
        Self {
            kind: ErrorKind::Config,
            inner,
        }
        .into()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.inner)
    }
}

impl std::error::Error for CliError {}

fn vision_kind(e: &VisionError) -> ErrorKind {
    match e {
        VisionError::Untrained
        | VisionError::StaleTrace { .. }
        | VisionError::ReplayMismatch { .. }
        | VisionError::CapacityExceeded(_) => ErrorKind::State,
        _ => ErrorKind::Config,
    }
}

fn classify(err: &anyhow::Error) -> ErrorKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.kind;
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return match e {
                DatasetError::InsufficientClass { .. } => ErrorKind::Config,
                DatasetError::VersionMismatch { .. }
                | DatasetError::HashMismatch { .. }
                | DatasetError::Malformed(_) => ErrorKind::State,
                DatasetError::Vision(v) => vision_kind(v),
                _ => ErrorKind::Io,
            };
        }
        if let Some(e) = cause.downcast_ref::<VisionError>() {
            return vision_kind(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorKind::Io;
        }
    }
    ErrorKind::Config
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { overrides } => commands::train(&overrides),
        Command::Eval { model, overrides } => commands::eval(&model, &overrides),
        Command::Sweep {
            axis,
            values,
            overrides,
        } => commands::sweep(axis, &values, &overrides),
        Command::Trace {
            model,
            index,
            overrides,
        } => commands::trace(&model, index, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).exit_code())
        }
    }
}
