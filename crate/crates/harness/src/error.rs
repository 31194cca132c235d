use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] clusterlab::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("series do not share a cluster labeling: {0}")]
    LabelMismatch(String),
    #[error("experiment {experiment}: {source}")]
    Experiment {
        experiment: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("run stopped after {completed_outputs} outputs; a checkpoint was left for resuming")]
    Interrupted { completed_outputs: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
