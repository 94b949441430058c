use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("block replacement failed: {0}")]
    Replacement(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("pruning stage {stage} failed: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
