//! Stage manifests: which configuration produced a stage and the content
//! hashes of what it read and wrote.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use expanet_core::error::IoError;
use expanet_core::io::{read_json, write_json};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, SCHEMA_VERSION};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Preprocess,
    Featurize,
    Graph,
    Train,
    TrainShuffled,
    Explain,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Featurize => "featurize",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::TrainShuffled => "train_shuffled",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }

    /// Command that produces this stage's outputs.
    pub fn command(self) -> &'static str {
        match self {
            Stage::TrainShuffled => "train --shuffle-labels",
            s => s.name(),
        }
    }

    pub fn train_for(cfg: &PipelineConfig) -> Stage {
        if cfg.shuffle_labels {
            Stage::TrainShuffled
        } else {
            Stage::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub schema_version: u32,
    pub config_hash: String,
    /// Keys are `data/<relative path>` or `work/<relative path>`.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of the configuration sections a stage (and everything upstream of
/// it) depends on. Paths are excluded so that moving a directory keeps the
/// hash.
pub fn config_hash(cfg: &PipelineConfig, stage: Stage) -> String {
    use serde_json::json;
    let mut parts = vec![json!(cfg.schema_version)];
    match stage {
        Stage::Synth => {
            parts.extend([json!(cfg.seed), json!(cfg.n_subjects), json!(cfg.synth)]);
        }
        _ => {
            parts.push(json!(cfg.dsp));
            if stage != Stage::Preprocess {
                parts.push(json!(cfg.features));
            }
            if !matches!(stage, Stage::Preprocess | Stage::Featurize) {
                parts.push(json!(cfg.top_k));
            }
            if matches!(stage, Stage::Train | Stage::TrainShuffled | Stage::Explain | Stage::Report) {
                let shuffled = match stage {
                    Stage::Train => false,
                    Stage::TrainShuffled => true,
                    _ => cfg.shuffle_labels,
                };
                parts.extend([json!(cfg.seed), json!(cfg.model), json!(cfg.trainer), json!(shuffled)]);
            }
            if matches!(stage, Stage::Explain | Stage::Report) {
                parts.push(json!(cfg.explain));
            }
        }
    }
    sha256_hex(serde_json::to_string(&parts).expect("configuration serialises").as_bytes())
}

/// Maps files under the data and work directories to manifest keys.
#[derive(Clone, Debug)]
pub struct Layout {
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout {
            data_dir: cfg.data_dir.clone(),
            work_dir: cfg.work_dir.clone(),
        }
    }

    pub fn key(&self, path: &Path) -> String {
        if let Ok(rel) = path.strip_prefix(&self.work_dir) {
            format!("work/{}", rel.display())
        } else if let Ok(rel) = path.strip_prefix(&self.data_dir) {
            format!("data/{}", rel.display())
        } else {
            path.display().to_string()
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        if let Some(rel) = key.strip_prefix("work/") {
            self.work_dir.join(rel)
        } else if let Some(rel) = key.strip_prefix("data/") {
            self.data_dir.join(rel)
        } else {
            PathBuf::from(key)
        }
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Synth => self.data_dir.join("synth.manifest.json"),
            s => self.work_dir.join(format!("{}.manifest.json", s.name())),
        }
    }

    pub fn hash_files(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
        paths
            .iter()
            .map(|p| {
                let h = file_sha256(p).map_err(|e| CliError::core("hashing", IoError::io(p)(e)))?;
                Ok((self.key(p), h))
            })
            .collect()
    }

    pub fn write_manifest(
        &self,
        cfg: &PipelineConfig,
        stage: Stage,
        inputs: BTreeMap<String, String>,
        outputs: &[PathBuf],
    ) -> Result<StageManifest, CliError> {
        let manifest = StageManifest {
            stage: stage.name().to_string(),
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash(cfg, stage),
            inputs,
            outputs: self.hash_files(outputs)?,
        };
        let path = self.manifest_path(stage);
        write_json(&path, &manifest).map_err(|e| CliError::core("writing manifest", e))?;
        Ok(manifest)
    }

    /// Loads the manifest of `upstream` for use by `stage`, checking that it
    /// was produced under the current configuration and that its outputs
    /// are unchanged on disk.
    pub fn require(&self, cfg: &PipelineConfig, stage: Stage, upstream: Stage) -> Result<StageManifest, CliError> {
        let path = self.manifest_path(upstream);
        if !path.exists() {
            return Err(CliError::StageInputMissing {
                stage: stage.name(),
                needs: upstream.command(),
                missing: path,
            });
        }
        let manifest: StageManifest = read_json(&path).map_err(|e| CliError::core("reading manifest", e))?;
        if manifest.config_hash != config_hash(cfg, upstream) {
            return Err(CliError::ConfigHashMismatch { stage: upstream.name() });
        }
        for (key, hash) in &manifest.outputs {
            let file = self.path(key);
            if !file.exists() {
                return Err(CliError::StageInputMissing {
                    stage: stage.name(),
                    needs: upstream.command(),
                    missing: file,
                });
            }
            let now = file_sha256(&file).map_err(|e| CliError::core("hashing", IoError::io(&file)(e)))?;
            if &now != hash {
                return Err(CliError::StaleInput {
                    stage: upstream.name(),
                    path: key.clone(),
                });
            }
        }
        Ok(manifest)
    }
}
