//! Subject-wise cross-validation, the optimisation loop, metrics and the
//! paired t-test.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::connectivity::BrainGraph;
use crate::error::{ModelError, TrainError};
use crate::features::FeatureScaler;
use crate::model::{
    bce_with_logit, forward_input, loss_and_grads, sigmoid, Dropout, GraphInput, ModelConfig,
    ModelParams,
};
use crate::recording::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_folds: usize,
    /// Share of training subjects held out for early stopping.
    pub val_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            n_folds: 10,
            val_fraction: 0.1,
            threshold: 0.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidInput(m.to_string()));
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("lr, batch_size and max_epochs must be positive");
        }
        if self.n_folds < 2 {
            return bad("n_folds must be at least 2");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Deterministic 64-bit mixing of several seeds (splitmix64 finaliser).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Unique subjects and their labels, in id order.
pub fn subjects_of(graphs: &[BrainGraph]) -> Vec<(String, Label)> {
    let mut map = BTreeMap::new();
    for g in graphs {
        map.entry(g.subject_id.clone()).or_insert(g.label);
    }
    map.into_iter().collect()
}

/// Interleaves the seeded shuffles of each class: `c0, c1, c0, c1, ...`.
fn stratified_order(subjects: &[(String, Label)], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut per_class: Vec<Vec<String>> = Label::ALL
        .iter()
        .map(|&l| {
            let mut ids: Vec<String> = subjects
                .iter()
                .filter(|(_, s)| *s == l)
                .map(|(id, _)| id.clone())
                .collect();
            ids.sort();
            ids.shuffle(rng);
            ids
        })
        .collect();
    let mut out = Vec::with_capacity(subjects.len());
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for class in &mut per_class {
            if let Some(id) = class.get_mut(i) {
                out.push(std::mem::take(id));
            }
        }
    }
    out
}

/// Stratified subject-level folds. Each class is shuffled with the seed and
/// dealt round-robin, the deal continuing across classes so fold sizes
/// differ by at most one.
pub fn make_folds(
    subjects: &[(String, Label)],
    n_folds: usize,
    seed: u64,
) -> Result<FoldPlan, TrainError> {
    if n_folds < 2 || subjects.len() < n_folds {
        return Err(TrainError::TooFewSubjects {
            needed: n_folds.max(2),
            got: subjects.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<String>> = vec![Vec::new(); n_folds];
    let mut slot = 0;
    for label in Label::ALL {
        let mut ids: Vec<String> = subjects
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids.shuffle(&mut rng);
        for id in ids {
            tests[slot % n_folds].push(id);
            slot += 1;
        }
    }
    let all: BTreeSet<&String> = subjects.iter().map(|(id, _)| id).collect();
    let folds = tests
        .into_iter()
        .enumerate()
        .map(|(index, mut test)| {
            test.sort();
            let test_set: BTreeSet<&String> = test.iter().collect();
            let train = all
                .iter()
                .filter(|id| !test_set.contains(*id))
                .map(|id| (*id).clone())
                .collect();
            Fold { index, train, test }
        })
        .collect();
    Ok(FoldPlan {
        n_folds,
        seed,
        folds,
    })
}

/// Confusion-matrix metrics in percent; MDD is the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// Metrics whose denominator was zero and were reported as 0.
    pub undefined: Vec<String>,
}

impl MetricsRow {
    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

/// Thresholds probabilities (`p >= threshold` predicts MDD) and computes
/// accuracy, precision, recall and F1.
pub fn evaluate(probabilities: &[f64], labels: &[Label], threshold: f64) -> Result<MetricsRow, TrainError> {
    if probabilities.len() != labels.len() {
        return Err(TrainError::LengthMismatch(probabilities.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in probabilities.iter().zip(labels) {
        match (p >= threshold, l == Label::Mdd) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let accuracy = ratio(tp + tn, labels.len(), "accuracy");
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push("f1".into());
        0.0
    };
    Ok(MetricsRow {
        accuracy,
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        undefined,
    })
}

/// Per-fold rows plus mean and sample standard deviation of each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl MetricsTable {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        let n = rows.len() as f64;
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            mean[k] = rows.iter().map(|r| r.values()[k]).sum::<f64>() / n;
            if rows.len() > 1 {
                let ss: f64 = rows.iter().map(|r| (r.values()[k] - mean[k]).powi(2)).sum();
                std[k] = (ss / (n - 1.0)).sqrt();
            }
        }
        MetricsTable { rows, mean, std }
    }

    /// `fold,accuracy,precision,recall,f1` with trailing mean and std rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,precision,recall,f1\n");
        for (i, r) in self.rows.iter().enumerate() {
            let v = r.values();
            out.push_str(&format!("{i},{:.4},{:.4},{:.4},{:.4}\n", v[0], v[1], v[2], v[3]));
        }
        let m = self.mean;
        out.push_str(&format!("mean,{:.4},{:.4},{:.4},{:.4}\n", m[0], m[1], m[2], m[3]));
        let s = self.std;
        out.push_str(&format!("std,{:.4},{:.4},{:.4},{:.4}\n", s[0], s[1], s[2], s[3]));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    /// Set when the differences have zero spread (t is infinite, p is 0).
    pub zero_variance: bool,
}

/// Two-sided paired t-test on per-fold metrics.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, TrainError> {
    if a.len() != b.len() {
        return Err(TrainError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(TrainError::InvalidInput(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Err(TrainError::DegenerateDifferences);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    if var == 0.0 {
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            dof,
            zero_variance: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| TrainError::InvalidInput(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        dof,
        zero_variance: false,
    })
}

/// Returns a copy of `graphs` whose labels are permuted across graphs with
/// the seed, leaving the class counts unchanged.
pub fn shuffle_labels(graphs: &[BrainGraph], seed: u64) -> Vec<BrainGraph> {
    let mut labels: Vec<Label> = graphs.iter().map(|g| g.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    graphs
        .iter()
        .zip(labels)
        .map(|(g, l)| BrainGraph { label: l, ..g.clone() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: ModelParams,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn mean_loss(model: &ModelParams, inputs: &[GraphInput]) -> Result<f64, ModelError> {
    let losses = inputs
        .par_iter()
        .map(|inp| forward_input(model, inp, false).map(|(z, _)| bce_with_logit(z, inp.target)))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Fits a model on `train` graphs, early-stopping on the mean loss of `val`
/// (or of `train` when `val` is empty). The input scaler is fitted on
/// `train` only. Returns the parameters of the best epoch.
pub fn fit(
    train: &[&BrainGraph],
    val: &[&BrainGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    let scaler = FeatureScaler::fit(train.iter().map(|g| &g.node_features))
        .ok_or(TrainError::EmptySplit("training"))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0]));
    let mut model = ModelParams::init(model_cfg, &mut init_rng)?;
    model.scaler = scaler;
    let to_inputs = |gs: &[&BrainGraph]| {
        gs.iter()
            .map(|g| GraphInput::new(g, &model.scaler))
            .collect::<Result<Vec<_>, _>>()
    };
    let train_in = to_inputs(train)?;
    let val_in = to_inputs(val)?;
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_in.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1, epoch as u64])));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2, epoch as u64, i as u64]));
                    let dropout = Dropout {
                        rate: model.config.dropout,
                        rng: &mut rng,
                    };
                    loss_and_grads(&model, &train_in[i], weight, Some(dropout))
                })
                .collect::<Vec<_>>();
            let mut total: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads) = match r {
                    Ok(v) => v,
                    Err(ModelError::Autodiff(crate::error::AutodiffError::NonFinite { .. })) => {
                        return Err(TrainError::DivergedLoss { epoch })
                    }
                    Err(e) => return Err(e.into()),
                };
                epoch_loss += loss;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            if let Some(grads) = total {
                let mut params = model.tensors_mut();
                adam_step(&mut params, &grads, &mut state, &adam).map_err(ModelError::from)?;
            }
        }
        let train_loss = epoch_loss / train_in.len() as f64;
        let monitor = if val_in.is_empty() { &train_in } else { &val_in };
        let val_loss = mean_loss(&model, monitor)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(FitResult {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}

/// Holds out `val_fraction` of the subjects (at least one when two or more
/// are available), alternating classes.
pub fn inner_split(subjects: &[(String, Label)], val_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    if subjects.len() < 2 || val_fraction <= 0.0 {
        return (subjects.iter().map(|(s, _)| s.clone()).collect(), Vec::new());
    }
    let order = stratified_order(subjects, &mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * subjects.len() as f64).round() as usize).clamp(1, subjects.len() - 1);
    let mut val: Vec<String> = order[..n_val].to_vec();
    let mut train: Vec<String> = order[n_val..].to_vec();
    val.sort();
    train.sort();
    (train, val)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub model: ModelParams,
    pub metrics: MetricsRow,
    pub probabilities: Vec<f64>,
    pub labels: Vec<Label>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn select<'a>(graphs: &'a [BrainGraph], ids: &[String]) -> Vec<&'a BrainGraph> {
    let set: BTreeSet<&String> = ids.iter().collect();
    graphs.iter().filter(|g| set.contains(&g.subject_id)).collect()
}

/// Trains on the fold's training subjects and scores its test subjects at
/// segment level.
pub fn train_fold(
    graphs: &[BrainGraph],
    fold: &Fold,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    let train_subjects: Vec<(String, Label)> = subjects_of(graphs)
        .into_iter()
        .filter(|(id, _)| fold.train.contains(id))
        .collect();
    let fold_seed = mix_seed(&[cfg.seed, 10, fold.index as u64]);
    let (inner_train, val) = inner_split(&train_subjects, cfg.val_fraction, fold_seed);
    let fit_result = fit(
        &select(graphs, &inner_train),
        &select(graphs, &val),
        model_cfg,
        cfg,
        fold_seed,
    )?;
    let test = select(graphs, &fold.test);
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let (probabilities, labels) = predict(&fit_result.model, &test)?;
    let metrics = evaluate(&probabilities, &labels, cfg.threshold)?;
    Ok(FoldResult {
        fold: fold.index,
        model: fit_result.model,
        metrics,
        probabilities,
        labels,
        history: fit_result.history,
        best_epoch: fit_result.best_epoch,
    })
}

/// Probabilities and true labels for a set of graphs.
pub fn predict(model: &ModelParams, graphs: &[&BrainGraph]) -> Result<(Vec<f64>, Vec<Label>), TrainError> {
    let probs = graphs
        .par_iter()
        .map(|g| {
            let input = GraphInput::new(g, &model.scaler)?;
            forward_input(model, &input, false).map(|(z, _)| sigmoid(z))
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok((probs, graphs.iter().map(|g| g.label).collect()))
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub table: MetricsTable,
}

/// Subject-wise k-fold cross-validation.
pub fn cross_validate(
    graphs: &[BrainGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<CvResult, TrainError> {
    cfg.validate()?;
    let plan = make_folds(&subjects_of(graphs), cfg.n_folds, cfg.seed)?;
    let folds = plan
        .folds
        .par_iter()
        .map(|f| train_fold(graphs, f, model_cfg, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let table = MetricsTable::from_rows(folds.iter().map(|f| f.metrics.clone()).collect());
    Ok(CvResult { plan, folds, table })
}

/// Fits one model on every subject (with the usual validation holdout),
/// e.g. for explanation.
pub fn train_full(
    graphs: &[BrainGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    let seed = mix_seed(&[cfg.seed, 20]);
    let (train, val) = inner_split(&subjects_of(graphs), cfg.val_fraction, seed);
    fit(&select(graphs, &train), &select(graphs, &val), model_cfg, cfg, seed)
}
