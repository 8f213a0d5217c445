use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("unknown selector `{name}` (registered: {known})")]
    UnknownSelector { name: String, known: String },
    #[error("selector `{0}` is not ready: {1}")]
    SelectorNotReady(String, String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Nn(#[from] obfusim_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
