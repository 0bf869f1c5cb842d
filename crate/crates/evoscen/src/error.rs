use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad map geometry, proportions, schema version).
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (missing control, empty buffer, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Not enough room in the init area to place all vehicles.
    #[error("spawn error: {0}")]
    Spawn(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss or saturated policy.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
