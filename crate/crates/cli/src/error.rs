use drivestyle::embed::EmbedError;
use drivestyle::eval::EvalError;
use drivestyle::features::FeatureError;
use drivestyle::ingest::IngestError;
use drivestyle::model::ModelError;
use drivestyle::pipeline::PipelineError;
use drivestyle::remote::RemoteError;
use drivestyle::semantic::SemanticError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<RemoteError> for CliError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::NotConfigured => CliError::Config(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::UnknownSignal(_) | FeatureError::BadThreshold(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SemanticError> for CliError {
    fn from(e: SemanticError) -> Self {
        match e {
            SemanticError::Remote(r) => r.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Remote(r) => r.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonfiniteLoss { .. } => CliError::Numeric(e.to_string()),
            ModelError::InvalidConfig(_) | ModelError::UnknownVariant(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Ingest(i) => i.into(),
            EvalError::BadRatios(_) | EvalError::BadSpec(_) | EvalError::UnknownFeature(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Feature(x) => x.into(),
            PipelineError::Semantic(x) => x.into(),
            PipelineError::Embed(x) => x.into(),
            PipelineError::Eval(x) => x.into(),
            PipelineError::Unlabeled(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
