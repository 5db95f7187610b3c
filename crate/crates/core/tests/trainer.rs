use expanet_core::autodiff::Tensor;
use expanet_core::connectivity::BrainGraph;
use expanet_core::model::ModelConfig;
use expanet_core::recording::Label;
use expanet_core::trainer::{cross_validate, evaluate, fit, predict, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 19;

/// Subjects whose class shifts one feature column on every node by +-1.
fn separable_graphs(n_per_class: usize, segments: usize, seed: u64) -> Vec<BrainGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (prefix, label, shift) in [("hc", Label::Hc, -1.0), ("mdd", Label::Mdd, 1.0)] {
        for s in 0..n_per_class {
            for seg in 0..segments {
                let mut feats = Tensor::zeros(N, 14);
                let mut plv = Tensor::zeros(N, N);
                for i in 0..N {
                    for f in 0..14 {
                        let v: f64 = rng.random_range(-0.5..0.5);
                        feats.set(i, f, if f == 11 { v + shift } else { v });
                    }
                    for j in i + 1..N {
                        let w = rng.random_range(0.1..0.9);
                        plv.set(i, j, w);
                        plv.set(j, i, w);
                    }
                }
                let mut edges: Vec<_> = (0..N).map(|i| (i.min((i + 1) % N), i.max((i + 1) % N))).collect();
                edges.sort_unstable();
                edges.dedup();
                out.push(BrainGraph::from_parts(feats, &plv, edges, label, format!("{prefix}{s:02}"), seg));
            }
        }
    }
    out
}

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden_dims: vec![16, 16],
        head_dims: vec![16, 8],
        ..ModelConfig::default()
    }
}

#[test]
fn separable_graphs_are_fitted_within_fifty_epochs() {
    let graphs = separable_graphs(4, 10, 3);
    let refs: Vec<&BrainGraph> = graphs.iter().collect();
    let cfg = TrainConfig {
        lr: 5e-3,
        max_epochs: 50,
        patience: 50,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let result = fit(&refs, &[], &small_model(), &cfg, 7).unwrap();
    assert!(result.history.len() <= 50);
    let (probs, labels) = predict(&result.model, &refs).unwrap();
    let acc = evaluate(&probs, &labels, 0.5).unwrap().accuracy;
    assert!(acc >= 99.0, "train accuracy {acc}");
}

#[test]
fn fixed_seed_reproduces_cross_validation() {
    let graphs = separable_graphs(3, 4, 11);
    let cfg = TrainConfig {
        n_folds: 3,
        max_epochs: 4,
        patience: 4,
        ..TrainConfig::default()
    };
    let a = cross_validate(&graphs, &small_model(), &cfg).unwrap();
    let b = cross_validate(&graphs, &small_model(), &cfg).unwrap();
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.table, b.table);
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        assert_eq!(fa.probabilities, fb.probabilities);
        assert_eq!(fa.history, fb.history);
    }
}
