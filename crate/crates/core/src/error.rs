use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class {class_id} (class count {classes})")]
    InvalidClass { class_id: usize, classes: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{}: {msg}", file.display())]
    Parse { file: PathBuf, msg: String },

    #[error("{}: unsupported maxval {maxval} (only 255)", file.display())]
    UnsupportedMaxval { file: PathBuf, maxval: u32 },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("checkpoint format error at offset {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },

    #[error("knowledge base format error at line {line}: {msg}")]
    KbFormat { line: usize, msg: String },

    #[error("knowledge base build failed: {0}")]
    KbBuild(String),

    #[error("training diverged in epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("frame error: {0}")]
    Frame(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("wire frame rejected: {0}")]
    Wire(String),

    #[error("wire frame CRC mismatch (expected {expected:#010x}, computed {computed:#010x})")]
    Crc { expected: u32, computed: u32 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by missing or inconsistent inputs rather than
    /// failures while running.
    pub fn is_setup(&self) -> bool {
        matches!(
            self,
            Error::Setup(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::UnsupportedMaxval { .. }
                | Error::Ingest(_)
                | Error::Checkpoint { .. }
                | Error::KbFormat { .. }
                | Error::InvalidArgument(_)
        )
    }
}
