use std::path::PathBuf;

use expanet_core::error::{
    ConnectivityError, DspError, Error as CoreError, FeatureError, IoError, ModelError, TrainError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} needs {missing}; run `expanet {needs}` first")]
    StageInputMissing {
        stage: &'static str,
        needs: &'static str,
        missing: PathBuf,
    },
    #[error("{stage} output was produced with a different configuration; rerun `expanet {stage}`")]
    ConfigHashMismatch { stage: &'static str },
    #[error("{path} changed since `expanet {stage}` wrote it; rerun that stage")]
    StaleInput { stage: &'static str, path: String },
    #[error("no recordings found in {0}")]
    NoRecordings(PathBuf),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
}

impl CliError {
    pub fn core(context: impl Into<String>, source: impl Into<CoreError>) -> Self {
        CliError::Core {
            context: context.into(),
            source: source.into(),
        }
    }

    /// 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigHashMismatch { .. } => 2,
            CliError::StageInputMissing { .. } | CliError::StaleInput { .. } | CliError::NoRecordings(_) => 3,
            CliError::Core { source, .. } => core_exit_code(source),
        }
    }
}

fn dsp_code(e: &DspError) -> i32 {
    match e {
        DspError::InvalidBand { .. } | DspError::InvalidCenter { .. } | DspError::InvalidParameter(_) => 2,
        DspError::TooShortSignal { .. } => 3,
        DspError::UnstableDesign { .. } => 4,
    }
}

fn feature_code(e: &FeatureError) -> i32 {
    match e {
        FeatureError::Dsp(d) => dsp_code(d),
        _ => 4,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::InvalidConfig(_) | ModelError::InputDimMismatch { .. } => 2,
        ModelError::IsolatedNode(_) => 3,
        ModelError::Autodiff(_) => 4,
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Dsp(d) => dsp_code(d),
        CoreError::Feature(f) => feature_code(f),
        CoreError::Connectivity(c) => match c {
            ConnectivityError::InvalidK { .. } => 2,
            ConnectivityError::Dsp(d) => dsp_code(d),
            ConnectivityError::Feature(f) => feature_code(f),
            _ => 3,
        },
        CoreError::Autodiff(_) => 4,
        CoreError::Model(m) => model_code(m),
        CoreError::Train(t) => match t {
            TrainError::TooFewSubjects { .. } | TrainError::EmptySplit(_) | TrainError::LengthMismatch(..) => 3,
            TrainError::InvalidInput(_) => 2,
            TrainError::Model(m) => model_code(m),
            TrainError::DivergedLoss { .. } | TrainError::DegenerateDifferences => 4,
        },
        CoreError::Explain(_) => 4,
        CoreError::Io(io) => match io {
            IoError::DimensionMismatch(_) | IoError::VersionMismatch { .. } => 2,
            _ => 3,
        },
    }
}
