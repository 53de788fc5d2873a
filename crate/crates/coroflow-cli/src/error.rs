//! Error-to-exit-code mapping.

use coroflow_model::ModelError;
use coroflow_nn::NnError;

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad invocation.
    Usage(String),
    /// Exit 2: unreadable, malformed, or inconsistent data.
    Data(String),
    /// Exit 3: numeric failure (non-finite loss, failed gradient check).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

macro_rules! data_from {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_from!(
    coroflow_core::geom::GeomError,
    coroflow_core::io::nifti::NiftiError,
    coroflow_core::io::vtp::VtpError,
    coroflow_core::io::dataset::DatasetError,
    coroflow_core::io::preds::PredsError,
    coroflow_core::patch::PatchError,
    coroflow_core::synth::SynthError,
    coroflow_core::metrics::MetricError,
    coroflow_core::vis::VisError,
    serde_json::Error,
    std::io::Error,
);

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            ModelError::Nn(NnError::NonFiniteGradient { .. }) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match &e {
            NnError::NonFiniteGradient { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
