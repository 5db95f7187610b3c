use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use expanet_cli::stages;
use expanet_cli::{CliError, Layout, PipelineConfig, Stage};

fn small_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        data_dir: root.join("data"),
        work_dir: root.join("work"),
        n_subjects: 6,
        ..PipelineConfig::default()
    };
    cfg.synth.duration_s = 15.0;
    cfg.trainer.n_folds = 3;
    cfg.trainer.max_epochs = 3;
    cfg.trainer.patience = 2;
    cfg.model.hidden_dims = vec![16, 16];
    cfg.model.head_dims = vec![16, 8];
    cfg.explain.masks.steps = 5;
    cfg.explain.max_graphs_per_subject = Some(2);
    cfg.resolve().unwrap()
}

#[test]
fn featurize_without_preprocess_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = stages::featurize(&cfg).unwrap_err();
    assert!(matches!(err, CliError::StageInputMissing { needs: "preprocess", .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("expanet preprocess"));
}

#[test]
fn preprocess_without_recordings_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = stages::preprocess(&small_config(dir.path())).unwrap_err();
    assert!(matches!(err, CliError::NoRecordings(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn odd_subject_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        n_subjects: 5,
        ..small_config(dir.path())
    };
    let err = stages::synth(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn stages_are_idempotent_and_detect_changes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    stages::synth(&cfg).unwrap();
    let pre = stages::preprocess(&cfg).unwrap();
    let first = stages::featurize(&cfg).unwrap();
    let second = stages::featurize(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(pre, stages::preprocess(&cfg).unwrap());
    let layout = Layout::new(&cfg);
    assert!(first.inputs.keys().all(|k| k.starts_with("work/epochs/")));
    assert_eq!(first.outputs.len(), 6);

    // a different feature configuration invalidates featurize's output for graph
    let mut changed = cfg.clone();
    changed.features.hfd_k_max = 8;
    let err = stages::graph(&changed).unwrap_err();
    assert!(matches!(err, CliError::ConfigHashMismatch { stage: "featurize" }), "{err}");
    assert_eq!(err.exit_code(), 2);

    // editing an upstream artefact is detected
    let victim = layout.path(first.outputs.keys().next().unwrap());
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push(' ');
    fs::write(&victim, text).unwrap();
    let err = stages::graph(&cfg).unwrap_err();
    assert!(matches!(err, CliError::StaleInput { stage: "featurize", .. }), "{err}");
}

#[test]
fn full_pipeline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    stages::synth(&cfg).unwrap();
    stages::run_all(&cfg).unwrap();
    let layout = Layout::new(&cfg);
    let cv = stages::load_cv(&layout, Stage::Train).unwrap();
    assert_eq!(cv.folds.len(), 3);
    assert_eq!(cv.table.rows.len(), 3);
    let n_predictions: usize = cv.folds.iter().map(|f| f.predictions.len()).sum();
    let graphs: Vec<expanet_core::BrainGraph> =
        expanet_core::io::read_json(&layout.work_dir.join("graphs.json")).unwrap();
    assert_eq!(n_predictions, graphs.len());
    let explanations = stages::load_explanations(&layout).unwrap();
    assert_eq!(explanations.len(), 12);
    let report = layout.work_dir.join("report");
    for name in ["metrics.csv", "features_hc.csv", "features_mdd.svg", "edges_hc.csv", "attention_diff_layer0.svg", "summary.json"] {
        assert!(report.join(name).exists(), "{name} missing");
    }
    assert!(!report.join("shuffle_comparison.json").exists());

    let shuffled = PipelineConfig {
        shuffle_labels: true,
        ..cfg.clone()
    };
    stages::train(&shuffled).unwrap();
    stages::report(&cfg).unwrap();
    assert!(report.join("shuffle_comparison.json").exists());

    // rerunning the report reproduces it byte for byte
    let before = fs::read(report.join("edges_mdd.csv")).unwrap();
    let m1 = stages::report(&cfg).unwrap();
    let m2 = stages::report(&cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(before, fs::read(report.join("edges_mdd.csv")).unwrap());
}

#[test]
fn binary_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_expanet");
    let status = Command::new(bin)
        .args(["featurize", "--out"])
        .arg(dir.path().join("work"))
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version": 9}"#).unwrap();
    let status = Command::new(bin)
        .args(["preprocess", "--config"])
        .arg(&bad)
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.json", "synthetic.json"] {
        PipelineConfig::load(&shipped.join(name)).unwrap().resolve().unwrap();
    }
}
