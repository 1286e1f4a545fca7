use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid layer: {0}")]
    Layer(String),
    #[error("compile error: {resource} exhausted (need {required}, have {available})")]
    Resource {
        resource: &'static str,
        required: usize,
        available: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("noc configuration: {0}")]
    Noc(String),
    #[error("simulation fault at cycle {cycle}, PE ({row},{col}): {reason}")]
    SimFault {
        cycle: u64,
        row: usize,
        col: usize,
        reason: String,
    },
    #[error("deadlock at cycle {cycle}: {report}")]
    Deadlock { cycle: u64, report: String },
    #[error("no feasible pass plan: {0}")]
    Plan(String),
    #[error("config: {0}")]
    Config(String),
    #[error("functional mismatch: {0}")]
    Mismatch(String),
    #[error("program file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
