//! One function per pipeline command. Every stage reads only what upstream
//! manifests list, writes its outputs, then its own manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use expanet_core::connectivity::{plv_matrix, topk_sparsify};
use expanet_core::dsp::preprocess_recording;
use expanet_core::error::IoError;
use expanet_core::explain::{build_bundle, explain_graphs, Explanation};
use expanet_core::features::extract_features;
use expanet_core::io::{load_model_expecting, load_recording, read_json, save_model, save_recording, write_json, write_report};
use expanet_core::synth::synth_dataset;
use expanet_core::trainer::{cross_validate, mix_seed, paired_t_test, shuffle_labels, train_full, MetricsTable};
use expanet_core::{BrainGraph, SaliencyBundle};
use log::info;
use rayon::prelude::*;

use crate::artifacts::{
    file_stem, load_epochs, save_epochs, CvSummary, FoldSummary, Prediction, ShuffleComparison, SubjectFeatures,
};
use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{Layout, Stage, StageManifest};

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::core("creating directory", IoError::io(dir)(e)))
}

/// Upstream output keys under `prefix` ending in `.json`.
fn listed(manifest: &StageManifest, layout: &Layout, prefix: &str) -> Vec<PathBuf> {
    manifest
        .outputs
        .keys()
        .filter(|k| k.starts_with(prefix) && k.ends_with(".json"))
        .map(|k| layout.path(k))
        .collect()
}

fn inputs_of(manifests: &[&StageManifest]) -> BTreeMap<String, String> {
    manifests
        .iter()
        .flat_map(|m| m.outputs.iter().map(|(k, v)| (k.clone(), v.clone())))
        .collect()
}

pub fn synth(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    if cfg.n_subjects < 2 || cfg.n_subjects % 2 != 0 {
        return Err(CliError::Config("n_subjects must be even and at least 2".into()));
    }
    let layout = Layout::new(cfg);
    mkdir(&layout.data_dir)?;
    let recordings = synth_dataset(cfg.n_subjects, &cfg.synth, cfg.seed);
    let mut outputs = Vec::new();
    for rec in &recordings {
        let path = layout.data_dir.join(format!("{}.json", file_stem(&rec.subject_id)));
        save_recording(rec, &path).map_err(|e| CliError::core("writing recording", e))?;
        outputs.push(path.with_extension("f32"));
        outputs.push(path);
    }
    info!("synth: wrote {} recordings to {}", recordings.len(), layout.data_dir.display());
    layout.write_manifest(cfg, Stage::Synth, BTreeMap::new(), &outputs)
}

/// Recording headers in the data directory, sorted by name.
fn find_recordings(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|_| CliError::NoRecordings(dir.to_path_buf()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".manifest.json")
        })
        .collect();
    if paths.is_empty() {
        return Err(CliError::NoRecordings(dir.to_path_buf()));
    }
    paths.sort();
    Ok(paths)
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let layout = Layout::new(cfg);
    let headers = find_recordings(&layout.data_dir)?;
    let out_dir = layout.work_dir.join("epochs");
    mkdir(&out_dir)?;
    let results = headers
        .par_iter()
        .map(|h| {
            let rec = load_recording(h).map_err(|e| CliError::core(format!("loading {}", h.display()), e))?;
            let epochs = preprocess_recording(&rec, &cfg.dsp)
                .map_err(|e| CliError::core(format!("preprocessing {}", rec.subject_id), e))?;
            Ok((rec.subject_id.clone(), epochs, h.with_extension("f32")))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut seen = BTreeSet::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for ((id, epochs, samples), header) in results.into_iter().zip(&headers) {
        if !seen.insert(file_stem(&id)) {
            return Err(CliError::core(
                "preprocess",
                IoError::corrupt(header, format!("subject id {id} appears twice")),
            ));
        }
        let path = out_dir.join(format!("{}.json", file_stem(&id)));
        outputs.extend(save_epochs(&epochs, &path).map_err(|e| CliError::core("writing epochs", e))?);
        inputs.push(header.clone());
        if samples.exists() {
            inputs.push(samples);
        }
    }
    info!("preprocess: {} subjects", seen.len());
    let inputs = layout.hash_files(&inputs)?;
    layout.write_manifest(cfg, Stage::Preprocess, inputs, &outputs)
}

pub fn featurize(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let layout = Layout::new(cfg);
    let pre = layout.require(cfg, Stage::Featurize, Stage::Preprocess)?;
    let out_dir = layout.work_dir.join("features");
    mkdir(&out_dir)?;
    let mut outputs = Vec::new();
    for path in listed(&pre, &layout, "work/epochs/") {
        let epochs = load_epochs(&path).map_err(|e| CliError::core("loading epochs", e))?;
        let matrices = epochs
            .par_iter()
            .map(|e| extract_features(e, &cfg.features))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::core(format!("features of {}", epochs[0].subject_id), e))?;
        let subject = SubjectFeatures {
            subject_id: epochs[0].subject_id.clone(),
            label: epochs[0].label,
            segment_indices: epochs.iter().map(|e| e.segment_index).collect(),
            matrices,
        };
        let out = out_dir.join(path.file_name().expect("epoch file name"));
        write_json(&out, &subject).map_err(|e| CliError::core("writing features", e))?;
        outputs.push(out);
    }
    info!("featurize: {} subjects", outputs.len());
    layout.write_manifest(cfg, Stage::Featurize, inputs_of(&[&pre]), &outputs)
}

pub fn graph(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let layout = Layout::new(cfg);
    let pre = layout.require(cfg, Stage::Graph, Stage::Preprocess)?;
    let feat = layout.require(cfg, Stage::Graph, Stage::Featurize)?;
    let mut graphs = Vec::new();
    for path in listed(&pre, &layout, "work/epochs/") {
        let epochs = load_epochs(&path).map_err(|e| CliError::core("loading epochs", e))?;
        let feat_path = layout.work_dir.join("features").join(path.file_name().expect("epoch file name"));
        let features: SubjectFeatures = read_json(&feat_path).map_err(|e| CliError::core("loading features", e))?;
        let indices: Vec<usize> = epochs.iter().map(|e| e.segment_index).collect();
        if features.segment_indices != indices {
            return Err(CliError::StaleInput {
                stage: Stage::Featurize.name(),
                path: layout.key(&feat_path),
            });
        }
        let built = epochs
            .par_iter()
            .zip(features.matrices)
            .map(|(e, fm)| {
                let plv = plv_matrix(e)?;
                let edges = topk_sparsify(&plv, cfg.top_k)?;
                let mut g = BrainGraph::from_parts(fm.values, &plv, edges, e.label, e.subject_id.clone(), e.segment_index);
                g.feature_flags = fm.flags;
                Ok(g)
            })
            .collect::<Result<Vec<_>, expanet_core::error::ConnectivityError>>()
            .map_err(|e| CliError::core(format!("graphs of {}", features.subject_id), e))?;
        graphs.extend(built);
    }
    let out = layout.work_dir.join("graphs.json");
    write_json(&out, &graphs).map_err(|e| CliError::core("writing graphs", e))?;
    info!("graph: {} graphs", graphs.len());
    layout.write_manifest(cfg, Stage::Graph, inputs_of(&[&pre, &feat]), &[out])
}

fn load_graphs(layout: &Layout) -> Result<Vec<BrainGraph>, CliError> {
    read_json(&layout.work_dir.join("graphs.json")).map_err(|e| CliError::core("loading graphs", e))
}

pub fn train(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let stage = Stage::train_for(cfg);
    let layout = Layout::new(cfg);
    let upstream = layout.require(cfg, stage, Stage::Graph)?;
    let mut graphs = load_graphs(&layout)?;
    if cfg.shuffle_labels {
        graphs = shuffle_labels(&graphs, mix_seed(&[cfg.seed, 30]));
    }
    let out_dir = layout.work_dir.join(stage.name());
    mkdir(&out_dir)?;
    info!("{}: cross-validating {} graphs, {} folds", stage.name(), graphs.len(), cfg.trainer.n_folds);
    let cv = cross_validate(&graphs, &cfg.model, &cfg.trainer).map_err(|e| CliError::core("cross-validation", e))?;
    info!("{}: fitting the full-data model", stage.name());
    let full = train_full(&graphs, &cfg.model, &cfg.trainer).map_err(|e| CliError::core("full-data fit", e))?;
    let folds = cv
        .folds
        .iter()
        .zip(&cv.plan.folds)
        .map(|(r, f)| {
            let test: BTreeSet<&String> = f.test.iter().collect();
            let predictions = graphs
                .iter()
                .filter(|g| test.contains(&g.subject_id))
                .zip(&r.probabilities)
                .map(|(g, &p)| Prediction {
                    subject_id: g.subject_id.clone(),
                    segment_index: g.segment_index,
                    label: g.label,
                    probability: p,
                })
                .collect();
            FoldSummary {
                fold: r.fold,
                test_subjects: f.test.clone(),
                best_epoch: r.best_epoch,
                metrics: r.metrics.clone(),
                history: r.history.clone(),
                predictions,
            }
        })
        .collect();
    let summary = CvSummary {
        shuffled_labels: cfg.shuffle_labels,
        plan: cv.plan.clone(),
        folds,
        table: cv.table.clone(),
        final_model_best_epoch: full.best_epoch,
    };
    let paths = TrainPaths::new(&layout, stage);
    write_json(&paths.cv, &summary).map_err(|e| CliError::core("writing cv summary", e))?;
    write_json(&paths.folds, &cv.plan).map_err(|e| CliError::core("writing folds", e))?;
    fs::write(&paths.metrics, cv.table.to_csv()).map_err(|e| CliError::core("writing metrics", IoError::io(&paths.metrics)(e)))?;
    save_model(&full.model, cfg.top_k, &paths.model).map_err(|e| CliError::core("writing model", e))?;
    info!(
        "{}: mean accuracy {:.1}% (std {:.1})",
        stage.name(),
        cv.table.mean[0],
        cv.table.std[0]
    );
    let outputs = [paths.cv, paths.folds, paths.metrics, paths.model.clone(), paths.model.with_extension("bin")];
    layout.write_manifest(cfg, stage, inputs_of(&[&upstream]), &outputs)
}

pub struct TrainPaths {
    pub cv: PathBuf,
    pub folds: PathBuf,
    pub metrics: PathBuf,
    pub model: PathBuf,
}

impl TrainPaths {
    pub fn new(layout: &Layout, stage: Stage) -> Self {
        let dir = layout.work_dir.join(stage.name());
        TrainPaths {
            cv: dir.join("cv.json"),
            folds: dir.join("folds.json"),
            metrics: dir.join("metrics.csv"),
            model: dir.join("model.json"),
        }
    }
}

/// At most `max` evenly spaced segments of each subject, in input order.
pub fn select_for_explanation(graphs: &[BrainGraph], max: Option<usize>) -> Vec<&BrainGraph> {
    let mut by_subject: BTreeMap<&str, Vec<&BrainGraph>> = BTreeMap::new();
    for g in graphs {
        by_subject.entry(&g.subject_id).or_default().push(g);
    }
    let mut keep = BTreeSet::new();
    for members in by_subject.values() {
        let n = members.len();
        let m = max.unwrap_or(n).min(n);
        for i in 0..m {
            let g = members[i * n / m];
            keep.insert((g.subject_id.as_str(), g.segment_index));
        }
    }
    graphs
        .iter()
        .filter(|g| keep.contains(&(g.subject_id.as_str(), g.segment_index)))
        .collect()
}

pub fn explain(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let train_stage = Stage::train_for(cfg);
    let layout = Layout::new(cfg);
    let graph_manifest = layout.require(cfg, Stage::Explain, Stage::Graph)?;
    let trained = layout.require(cfg, Stage::Explain, train_stage)?;
    let graphs = load_graphs(&layout)?;
    let model = load_model_expecting(&TrainPaths::new(&layout, train_stage).model, &cfg.model, cfg.top_k)
        .map_err(|e| CliError::core("loading model", e))?
        .params;
    let chosen = select_for_explanation(&graphs, cfg.explain.max_graphs_per_subject);
    info!("explain: optimising masks for {} graphs", chosen.len());
    let explanations =
        explain_graphs(&model, &chosen, &cfg.explain.masks).map_err(|e| CliError::core("mask optimisation", e))?;
    let bundle = build_bundle(&model, &chosen, &explanations).map_err(|e| CliError::core("aggregating saliency", e))?;
    info!("explain: {}/{} explanations preserve the prediction", bundle.n_faithful, bundle.n_explained);
    let out_dir = layout.work_dir.join("explain");
    mkdir(&out_dir)?;
    let (exp_path, bundle_path) = (out_dir.join("explanations.json"), out_dir.join("bundle.json"));
    write_json(&exp_path, &explanations).map_err(|e| CliError::core("writing explanations", e))?;
    write_json(&bundle_path, &bundle).map_err(|e| CliError::core("writing saliency", e))?;
    layout.write_manifest(cfg, Stage::Explain, inputs_of(&[&graph_manifest, &trained]), &[exp_path, bundle_path])
}

pub fn load_explanations(layout: &Layout) -> Result<Vec<Explanation>, CliError> {
    read_json(&layout.work_dir.join("explain").join("explanations.json"))
        .map_err(|e| CliError::core("loading explanations", e))
}

pub fn load_cv(layout: &Layout, stage: Stage) -> Result<CvSummary, CliError> {
    read_json(&TrainPaths::new(layout, stage).cv).map_err(|e| CliError::core("loading cv summary", e))
}

pub fn report(cfg: &PipelineConfig) -> Result<StageManifest, CliError> {
    let train_stage = Stage::train_for(cfg);
    let layout = Layout::new(cfg);
    let explained = layout.require(cfg, Stage::Report, Stage::Explain)?;
    let trained = layout.require(cfg, Stage::Report, train_stage)?;
    let bundle: SaliencyBundle = read_json(&layout.work_dir.join("explain").join("bundle.json"))
        .map_err(|e| CliError::core("loading saliency", e))?;
    let cv = load_cv(&layout, train_stage)?;
    let out_dir = layout.work_dir.join("report");
    let mut outputs = write_report(&bundle, Some(&cv.table), &out_dir)
        .map_err(|e| CliError::core("writing report", e))?
        .files;
    let mut manifests = vec![explained, trained];

    // Compare against the other label condition when it was trained under
    // the same settings.
    let other_stage = match train_stage {
        Stage::Train => Stage::TrainShuffled,
        _ => Stage::Train,
    };
    let other_cfg = PipelineConfig {
        shuffle_labels: !cfg.shuffle_labels,
        ..cfg.clone()
    };
    match layout.require(&other_cfg, Stage::Report, other_stage) {
        Ok(other) => {
            let other_cv = load_cv(&layout, other_stage)?;
            let (real, shuffled) = if cfg.shuffle_labels { (&other_cv, &cv) } else { (&cv, &other_cv) };
            let acc = |t: &MetricsTable| t.rows.iter().map(|r| r.accuracy).collect::<Vec<_>>();
            let (a, b) = (acc(&real.table), acc(&shuffled.table));
            let t_test = paired_t_test(&a, &b).map_err(|e| CliError::core("paired t-test", e))?;
            info!("report: real vs shuffled accuracy t = {:.3}, p = {:.3e}", t_test.t, t_test.p);
            let path = out_dir.join("shuffle_comparison.json");
            write_json(&path, &ShuffleComparison {
                real_accuracy: a,
                shuffled_accuracy: b,
                t_test,
            })
            .map_err(|e| CliError::core("writing comparison", e))?;
            outputs.push(path);
            manifests.push(other);
        }
        Err(e) => info!("report: no shuffled-label comparison ({e})"),
    }
    let refs: Vec<&StageManifest> = manifests.iter().collect();
    info!("report: {} files in {}", outputs.len(), out_dir.display());
    layout.write_manifest(cfg, Stage::Report, inputs_of(&refs), &outputs)
}

/// Every stage after `synth`, in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<(), CliError> {
    preprocess(cfg)?;
    featurize(cfg)?;
    graph(cfg)?;
    train(cfg)?;
    explain(cfg)?;
    report(cfg)?;
    Ok(())
}
