use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown skeleton preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("degenerate pose: shoulder joints coincide (|uR - uL| = {0:e})")]
    DegeneratePose(f64),

    #[error("invalid play script: {0}")]
    Script(String),

    #[error("play has no ball sidecar; labelers need ball metadata")]
    MissingSidecar,

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported file version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file while reading {0}")]
    Truncated(String),

    #[error("checksum mismatch in section `{0}`")]
    Checksum(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown player id `{0}`")]
    UnknownPlayer(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("probe: {0}")]
    Probe(String),

    #[error("average precision needs at least one positive label")]
    NoPositives,

    #[error("missing checkpoints for variants: {0}")]
    MissingVariants(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
