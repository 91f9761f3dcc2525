use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("action {action} out of range, expected 0..={max}")]
    ActionOutOfRange { action: usize, max: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training diverged at episode {episode}, step {step}: {what}")]
    Diverged {
        episode: usize,
        step: usize,
        what: &'static str,
    },
    #[error("malformed parameter snapshot: {0}")]
    Snapshot(&'static str),
}
