//! On-disk formats: recordings (JSON header + raw `f32le` samples), models
//! (JSON manifest + raw `f64le` blob), JSON artefacts and reports.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::IoError;
use crate::features::FeatureScaler;
use crate::model::{ModelConfig, ModelParams};
use crate::recording::{Label, Montage, Recording};

pub use report::{write_report, ReportFiles};

pub const RECORDING_DTYPE: &str = "f32le";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    pub dtype: String,
    /// Sample file relative to the header; defaults to the header path with
    /// an `.f32` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

fn data_path(header_path: &Path, header: &RecordingHeader) -> PathBuf {
    match &header.data_file {
        Some(name) => header_path.with_file_name(name),
        None => header_path.with_extension("f32"),
    }
}

/// Writes `path` (header) and its sibling sample file. Samples are stored
/// as `f32`, row-major `[channel][sample]`.
pub fn save_recording(rec: &Recording, path: &Path) -> Result<(), IoError> {
    rec.validate()?;
    let data_file = path.with_extension("f32");
    let header = RecordingHeader {
        subject_id: rec.subject_id.clone(),
        label: rec.label,
        sample_rate_hz: rec.sample_rate_hz,
        channel_names: rec.channel_names.clone(),
        n_samples: rec.n_samples(),
        dtype: RECORDING_DTYPE.to_string(),
        data_file: data_file.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    let mut bytes = Vec::with_capacity(rec.data.len() * rec.n_samples() * 4);
    for row in &rec.data {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(&data_file, bytes).map_err(IoError::io(&data_file))?;
    write_json(path, &header)
}

/// Reads a recording and projects it onto the canonical montage.
pub fn load_recording(path: &Path) -> Result<Recording, IoError> {
    let text = fs::read_to_string(path).map_err(IoError::io(path))?;
    let header: RecordingHeader =
        serde_json::from_str(&text).map_err(|e| IoError::corrupt(path, e.to_string()))?;
    if header.dtype != RECORDING_DTYPE {
        return Err(IoError::corrupt(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    if !(header.sample_rate_hz > crate::recording::MIN_SAMPLE_RATE_HZ) {
        return Err(IoError::SampleRateTooLow(header.sample_rate_hz));
    }
    let montage = Montage::standard();
    if let Some(missing) = montage.names().iter().find(|n| !header.channel_names.contains(n)) {
        return Err(IoError::MissingChannel(missing.clone()));
    }
    let raw_path = data_path(path, &header);
    let bytes = fs::read(&raw_path).map_err(IoError::io(&raw_path))?;
    let n_ch = header.channel_names.len();
    let expected = n_ch * header.n_samples * 4;
    if bytes.len() != expected {
        return Err(IoError::corrupt(
            path,
            format!("{} holds {} bytes, header implies {expected}", raw_path.display(), bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4 * header.n_samples.max(1))
        .take(n_ch)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        })
        .collect();
    let rec = Recording::new(header.subject_id, header.label, header.sample_rate_hz, header.channel_names, data)?;
    rec.to_montage(&montage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    version: u32,
    config: ModelConfig,
    top_k: usize,
    scaler: FeatureScaler,
    dtype: String,
    blob: String,
    tensors: Vec<TensorEntry>,
}

/// A model together with the graph sparsity it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub top_k: usize,
}

/// Writes the manifest to `path` and the parameters to `path` with a
/// `.bin` extension.
pub fn save_model(params: &ModelParams, top_k: usize, path: &Path) -> Result<(), IoError> {
    let tensors = params.tensors();
    if let Some(bad) = tensors.iter().position(|t| !t.is_finite()) {
        return Err(IoError::DimensionMismatch(format!(
            "parameter {} is not finite",
            params.tensor_names()[bad]
        )));
    }
    let blob_path = path.with_extension("bin");
    let mut bytes = Vec::with_capacity(params.n_parameters() * 8);
    for t in &tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&blob_path, bytes).map_err(IoError::io(&blob_path))?;
    let manifest = ModelManifest {
        version: MODEL_FORMAT_VERSION,
        config: params.config.clone(),
        top_k,
        scaler: params.scaler.clone(),
        dtype: "f64le".into(),
        blob: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(&tensors)
            .map(|(name, t)| TensorEntry {
                name,
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    write_json(path, &manifest)
}

pub fn load_model(path: &Path) -> Result<SavedModel, IoError> {
    let text = fs::read_to_string(path).map_err(IoError::io(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| IoError::corrupt(path, e.to_string()))?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let manifest: ModelManifest =
        serde_json::from_value(value).map_err(|e| IoError::corrupt(path, e.to_string()))?;
    if manifest.dtype != "f64le" {
        return Err(IoError::corrupt(path, format!("unsupported dtype {:?}", manifest.dtype)));
    }
    let mut params = ModelParams::init(&manifest.config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))
        .map_err(|e| IoError::corrupt(path, e.to_string()))?;
    let names = params.tensor_names();
    let layout: Vec<(String, usize, usize)> = names
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| (n.clone(), t.rows(), t.cols()))
        .collect();
    let stored: Vec<(String, usize, usize)> = manifest.tensors.iter().map(|t| (t.name.clone(), t.rows, t.cols)).collect();
    if layout != stored {
        return Err(IoError::corrupt(path, "tensor list does not match the stored configuration"));
    }
    let blob_path = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(IoError::io(&blob_path))?;
    let n: usize = layout.iter().map(|(_, r, c)| r * c).sum();
    if bytes.len() != 8 * n {
        return Err(IoError::corrupt(
            path,
            format!("{} holds {} bytes, manifest implies {}", blob_path.display(), bytes.len(), 8 * n),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of eight bytes")));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    if manifest.scaler.mean.len() != manifest.config.input_dim || manifest.scaler.std.len() != manifest.config.input_dim {
        return Err(IoError::corrupt(path, "scaler width differs from input_dim"));
    }
    params.scaler = manifest.scaler;
    Ok(SavedModel {
        params,
        top_k: manifest.top_k,
    })
}

/// [`load_model`] that also insists on a given architecture and top-k.
pub fn load_model_expecting(path: &Path, config: &ModelConfig, top_k: usize) -> Result<SavedModel, IoError> {
    let saved = load_model(path)?;
    let got = &saved.params.config;
    let mut diffs = Vec::new();
    if got.input_dim != config.input_dim {
        diffs.push(format!("input_dim {} (expected {})", got.input_dim, config.input_dim));
    }
    if got.hidden_dims != config.hidden_dims {
        diffs.push(format!("hidden_dims {:?} (expected {:?})", got.hidden_dims, config.hidden_dims));
    }
    if got.gate_hidden != config.gate_hidden {
        diffs.push(format!("gate_hidden {} (expected {})", got.gate_hidden, config.gate_hidden));
    }
    if got.head_dims != config.head_dims {
        diffs.push(format!("head_dims {:?} (expected {:?})", got.head_dims, config.head_dims));
    }
    if saved.top_k != top_k {
        diffs.push(format!("top_k {} (expected {top_k})", saved.top_k));
    }
    if diffs.is_empty() {
        Ok(saved)
    } else {
        Err(IoError::DimensionMismatch(diffs.join(", ")))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::corrupt(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(IoError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(IoError::io(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::corrupt(path, e.to_string()))
}

/// Writes a matrix as CSV with the given row and column labels.
pub(crate) fn matrix_csv(m: &Tensor, row_names: &[String], col_names: &[String]) -> String {
    let mut out = String::from("channel");
    for c in col_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (r, name) in row_names.iter().enumerate() {
        out.push_str(name);
        for c in 0..m.cols() {
            out.push_str(&format!(",{:.6}", m.get(r, c)));
        }
        out.push('\n');
    }
    out
}
