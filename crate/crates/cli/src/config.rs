use std::path::{Path, PathBuf};

use expanet_core::connectivity::DEFAULT_TOP_K;
use expanet_core::dsp::DspConfig;
use expanet_core::explain::ExplainConfig;
use expanet_core::features::FeatureConfig;
use expanet_core::model::ModelConfig;
use expanet_core::recording::N_CHANNELS;
use expanet_core::synth::SynthConfig;
use expanet_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainStageConfig {
    #[serde(flatten)]
    pub masks: ExplainConfig,
    /// Explain at most this many evenly spaced segments per subject; all
    /// segments when absent.
    pub max_graphs_per_subject: Option<usize>,
}

impl Default for ExplainStageConfig {
    fn default() -> Self {
        ExplainStageConfig {
            masks: ExplainConfig::default(),
            max_graphs_per_subject: None,
        }
    }
}

/// Everything a pipeline run depends on. Command-line flags override the
/// fields of the same name (`--out` sets `work_dir`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Seeds synthesis, fold assignment, initialisation and dropout.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    /// Subjects generated by `synth`, half per class.
    pub n_subjects: usize,
    /// Train on labels permuted across graphs (null-model control).
    pub shuffle_labels: bool,
    pub synth: SynthConfig,
    pub dsp: DspConfig,
    pub features: FeatureConfig,
    pub top_k: usize,
    pub model: ModelConfig,
    pub trainer: TrainConfig,
    pub explain: ExplainStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            data_dir: PathBuf::from("data"),
            work_dir: PathBuf::from("work"),
            n_subjects: 40,
            shuffle_labels: false,
            synth: SynthConfig::default(),
            dsp: DspConfig::default(),
            features: FeatureConfig::default(),
            top_k: DEFAULT_TOP_K,
            model: ModelConfig::default(),
            trainer: TrainConfig::default(),
            explain: ExplainStageConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(CliError::Config(format!(
                    "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                    path.display()
                )))
            }
            None => return Err(CliError::Config(format!("{}: schema_version is missing", path.display()))),
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the top-level seed into the trainer and checks every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.trainer.seed = self.seed;
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version must be {SCHEMA_VERSION}"));
        }
        if self.top_k == 0 || self.top_k >= N_CHANNELS {
            return bad(format!("top_k must be in 1..{N_CHANNELS}"));
        }
        if self.model.input_dim != expanet_core::features::N_FEATURES {
            return bad(format!("model.input_dim must be {}", expanet_core::features::N_FEATURES));
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.trainer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.dsp.overlap >= 0.0 && self.dsp.overlap < 1.0) || !(self.dsp.epoch_s > 0.0) {
            return bad("dsp.epoch_s must be positive and dsp.overlap in [0, 1)".into());
        }
        let e = &self.explain.masks;
        if [e.alpha, e.beta, e.gamma, e.delta, e.eta, e.zeta].iter().any(|c| !(*c >= 0.0)) {
            return bad("explain coefficients must be non-negative".into());
        }
        if !(e.lr > 0.0) {
            return bad("explain.lr must be positive".into());
        }
        if self.explain.max_graphs_per_subject == Some(0) {
            return bad("explain.max_graphs_per_subject must be positive".into());
        }
        Ok(self)
    }
}
