//! On-disk formats of intermediate stage outputs.

use std::fs;
use std::path::{Path, PathBuf};

use expanet_core::dsp::Epoch;
use expanet_core::error::IoError;
use expanet_core::features::FeatureMatrix;
use expanet_core::io::{read_json, write_json};
use expanet_core::trainer::{EpochLog, FoldPlan, MetricsRow, MetricsTable, TTest};
use expanet_core::Label;
use serde::{Deserialize, Serialize};

pub const EPOCH_DTYPE: &str = "f64le";

/// Header of a subject's epochs; samples live in a sibling `.bin` file,
/// ordered `[epoch][channel][sample]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochsHeader {
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub segment_indices: Vec<usize>,
    pub dtype: String,
}

/// File stem for a subject id; anything outside `[A-Za-z0-9_-]` becomes `_`.
pub fn file_stem(subject_id: &str) -> String {
    subject_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the header to `path` and samples next to it; returns both paths.
pub fn save_epochs(epochs: &[Epoch], path: &Path) -> Result<Vec<PathBuf>, IoError> {
    let first = epochs
        .first()
        .ok_or_else(|| IoError::corrupt(path, "no epochs to write"))?;
    let header = EpochsHeader {
        subject_id: first.subject_id.clone(),
        label: first.label,
        sample_rate_hz: first.sample_rate_hz,
        n_channels: first.data.len(),
        n_samples: first.n_samples(),
        segment_indices: epochs.iter().map(|e| e.segment_index).collect(),
        dtype: EPOCH_DTYPE.to_string(),
    };
    let mut bytes = Vec::with_capacity(epochs.len() * header.n_channels * header.n_samples * 8);
    for e in epochs {
        for row in &e.data {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let bin = path.with_extension("bin");
    write_json(path, &header)?;
    fs::write(&bin, bytes).map_err(IoError::io(&bin))?;
    Ok(vec![path.to_path_buf(), bin])
}

pub fn load_epochs(path: &Path) -> Result<Vec<Epoch>, IoError> {
    let header: EpochsHeader = read_json(path)?;
    if header.dtype != EPOCH_DTYPE {
        return Err(IoError::corrupt(path, format!("dtype {} is not {EPOCH_DTYPE}", header.dtype)));
    }
    let bin = path.with_extension("bin");
    let bytes = fs::read(&bin).map_err(IoError::io(&bin))?;
    let per_epoch = header.n_channels * header.n_samples;
    if bytes.len() != 8 * per_epoch * header.segment_indices.len() {
        return Err(IoError::corrupt(&bin, "sample count does not match header"));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    Ok(header
        .segment_indices
        .iter()
        .map(|&segment_index| Epoch {
            subject_id: header.subject_id.clone(),
            label: header.label,
            sample_rate_hz: header.sample_rate_hz,
            data: (0..header.n_channels)
                .map(|_| values.by_ref().take(header.n_samples).collect())
                .collect(),
            segment_index,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub label: Label,
    pub segment_indices: Vec<usize>,
    pub matrices: Vec<FeatureMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub segment_index: usize,
    pub label: Label,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub best_epoch: usize,
    pub metrics: MetricsRow,
    pub history: Vec<EpochLog>,
    pub predictions: Vec<Prediction>,
}

/// Cross-validation results as written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub shuffled_labels: bool,
    pub plan: FoldPlan,
    pub folds: Vec<FoldSummary>,
    pub table: MetricsTable,
    /// Epoch whose weights the saved full-data model kept.
    pub final_model_best_epoch: usize,
}

/// Fold accuracies of the real-label run against the shuffled-label run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleComparison {
    pub real_accuracy: Vec<f64>,
    pub shuffled_accuracy: Vec<f64>,
    pub t_test: TTest,
}
