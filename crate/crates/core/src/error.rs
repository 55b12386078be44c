use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(alloc::vec::Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid alignment: {0}")]
    NoAlignment(String),
    #[error("invalid config: {0}")]
    Config(String),
}
