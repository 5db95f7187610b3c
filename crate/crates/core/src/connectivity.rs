//! Phase-locking connectivity and graph assembly.

use std::collections::BTreeSet;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dsp::{hilbert_phase, Epoch, MIN_HILBERT_LEN};
use crate::error::{ConnectivityError, DspError};
use crate::features::{extract_features, FeatureConfig, FeatureFlag};
use crate::recording::Label;

pub const DEFAULT_TOP_K: usize = 5;

/// One epoch as a sparse, weighted, undirected graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrainGraph {
    /// Raw (unstandardised) node attributes, `n_nodes x 14`.
    pub node_features: Tensor,
    /// Symmetric PLV matrix with unselected entries zeroed.
    pub adjacency: Tensor,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub label: Label,
    pub subject_id: String,
    pub segment_index: usize,
    #[serde(default)]
    pub feature_flags: Vec<FeatureFlag>,
}

impl BrainGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn edge_weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency.get(i, j)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j)| i == node || j == node)
            .count()
    }

    /// Assembles a graph from a full PLV matrix and an edge list, zeroing
    /// every adjacency entry that is not an edge.
    pub fn from_parts(
        node_features: Tensor,
        plv: &Tensor,
        edges: Vec<(usize, usize)>,
        label: Label,
        subject_id: String,
        segment_index: usize,
    ) -> Self {
        let n = plv.rows();
        let mut adjacency = Tensor::zeros(n, n);
        for &(i, j) in &edges {
            adjacency.set(i, j, plv.get(i, j));
            adjacency.set(j, i, plv.get(i, j));
        }
        BrainGraph {
            node_features,
            adjacency,
            edges,
            label,
            subject_id,
            segment_index,
            feature_flags: Vec::new(),
        }
    }
}

/// `|mean(exp(i (phi_i - phi_j)))|`, clamped to `[0, 1]`.
pub fn plv_pair(phase_i: &[f64], phase_j: &[f64]) -> Result<f64, ConnectivityError> {
    if phase_i.len() != phase_j.len() {
        return Err(ConnectivityError::LengthMismatch(phase_i.len(), phase_j.len()));
    }
    if phase_i.len() < MIN_HILBERT_LEN {
        return Err(DspError::TooShortSignal {
            needed: MIN_HILBERT_LEN,
            got: phase_i.len(),
        }
        .into());
    }
    let (mut re, mut im) = (0.0, 0.0);
    for (a, b) in phase_i.iter().zip(phase_j) {
        let (s, c) = (a - b).sin_cos();
        re += c;
        im += s;
    }
    let n = phase_i.len() as f64;
    Ok((re / n).hypot(im / n).min(1.0))
}

/// PLV between every pair of channels of an epoch; symmetric with zero
/// diagonal.
pub fn plv_matrix(epoch: &Epoch) -> Result<Tensor, ConnectivityError> {
    plv_matrix_from_channels(&epoch.data)
}

pub fn plv_matrix_from_channels(channels: &[Vec<f64>]) -> Result<Tensor, ConnectivityError> {
    let phasors = channels
        .iter()
        .map(|x| {
            Ok(hilbert_phase(x)?
                .into_iter()
                .map(|p| Complex64::from_polar(1.0, p))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, DspError>>()?;
    let n = phasors.len();
    let mut plv = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&phasors[i], &phasors[j]);
            if a.len() != b.len() {
                return Err(ConnectivityError::LengthMismatch(a.len(), b.len()));
            }
            let s: Complex64 = a.iter().zip(b).map(|(p, q)| p * q.conj()).sum();
            let v = (s.norm() / a.len() as f64).min(1.0);
            plv.set(i, j, v);
            plv.set(j, i, v);
        }
    }
    Ok(plv)
}

/// Union top-k: `(i, j)` is kept when `j` is among the `k` strongest
/// neighbours of `i` or vice versa. Ties prefer the smaller channel index.
pub fn topk_sparsify(adjacency: &Tensor, k: usize) -> Result<Vec<(usize, usize)>, ConnectivityError> {
    let (rows, cols) = adjacency.shape();
    if rows != cols || rows < 2 {
        return Err(ConnectivityError::NotSquare(rows, cols));
    }
    if k == 0 || k > rows - 1 {
        return Err(ConnectivityError::InvalidK { k, max: rows - 1 });
    }
    let mut kept = BTreeSet::new();
    for i in 0..rows {
        let mut others: Vec<usize> = (0..rows).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            adjacency
                .get(i, b)
                .total_cmp(&adjacency.get(i, a))
                .then(a.cmp(&b))
        });
        for &j in &others[..k] {
            kept.insert((i.min(j), i.max(j)));
        }
    }
    Ok(kept.into_iter().collect())
}

/// Features, PLV and top-k sparsification for one epoch.
pub fn build_graph(
    epoch: &Epoch,
    feature_cfg: &FeatureConfig,
    k: usize,
) -> Result<BrainGraph, ConnectivityError> {
    let features = extract_features(epoch, feature_cfg)?;
    let plv = plv_matrix(epoch)?;
    let edges = topk_sparsify(&plv, k)?;
    let mut graph = BrainGraph::from_parts(
        features.values,
        &plv,
        edges,
        epoch.label,
        epoch.subject_id.clone(),
        epoch.segment_index,
    );
    graph.feature_flags = features.flags;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn noise_channels(seed: u64, n_ch: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_ch)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn epoch(data: Vec<Vec<f64>>) -> Epoch {
        Epoch {
            subject_id: "s1".into(),
            label: Label::Mdd,
            sample_rate_hz: 128.0,
            data,
            segment_index: 3,
        }
    }

    #[test]
    fn plv_of_identical_and_offset_phases_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..640).map(|_| rng.random_range(-PI..PI)).collect();
        let q: Vec<f64> = p.iter().map(|v| v + 0.7).collect();
        assert!((plv_pair(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((plv_pair(&p, &q).unwrap() - 1.0).abs() < 1e-12);
        let r: Vec<f64> = (0..640).map(|_| rng.random_range(-PI..PI)).collect();
        assert!(plv_pair(&p, &r).unwrap() < 0.15);
        assert!(matches!(
            plv_pair(&p, &r[..10]),
            Err(ConnectivityError::LengthMismatch(640, 10))
        ));
    }

    #[test]
    fn plv_matrix_matches_pairwise_loop() {
        let data = noise_channels(2, 19, 640);
        let m = plv_matrix(&epoch(data.clone())).unwrap();
        let phases: Vec<Vec<f64>> = data.iter().map(|x| hilbert_phase(x).unwrap()).collect();
        let mut off_diag = 0.0;
        for i in 0..19 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..19 {
                if i == j {
                    continue;
                }
                let direct = plv_pair(&phases[i], &phases[j]).unwrap();
                assert!((m.get(i, j) - direct).abs() < 1e-12);
                assert_eq!(m.get(i, j), m.get(j, i));
                off_diag += m.get(i, j) / (19.0 * 18.0);
            }
        }
        assert!(off_diag < 0.2, "{off_diag}");
    }

    #[test]
    fn copied_channels_are_fully_locked() {
        let x = noise_channels(3, 1, 640).remove(0);
        let m = plv_matrix(&epoch(vec![x; 19])).unwrap();
        for i in 0..19 {
            for j in 0..19 {
                if i != j {
                    assert!((m.get(i, j) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    /// Brute force: edge iff rank of j in row i (or i in row j) is below k.
    fn union_oracle(a: &Tensor, k: usize) -> Vec<(usize, usize)> {
        let n = a.rows();
        let in_topk = |i: usize, j: usize| {
            let better = (0..n)
                .filter(|&m| m != i && m != j)
                .filter(|&m| a.get(i, m) > a.get(i, j) || (a.get(i, m) == a.get(i, j) && m < j))
                .count();
            better < k
        };
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if in_topk(i, j) || in_topk(j, i) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn complete_graph_at_k_max() {
        let m = plv_matrix(&epoch(noise_channels(4, 19, 256))).unwrap();
        assert_eq!(topk_sparsify(&m, 18).unwrap().len(), 171);
        assert!(matches!(topk_sparsify(&m, 0), Err(ConnectivityError::InvalidK { .. })));
        assert!(matches!(topk_sparsify(&m, 19), Err(ConnectivityError::InvalidK { .. })));
    }

    #[test]
    fn perfect_matching_at_k_one() {
        let mut a = Tensor::filled(19, 19, 0.1);
        for i in 0..19 {
            a.set(i, i, 0.0);
        }
        for p in 0..9 {
            a.set(2 * p, 2 * p + 1, 0.9);
            a.set(2 * p + 1, 2 * p, 0.9);
        }
        let edges = topk_sparsify(&a, 1).unwrap();
        assert_eq!(edges, union_oracle(&a, 1));
        // node 18 has no partner and ties to node 0
        assert_eq!(edges.len(), 10);
        assert!(edges.contains(&(0, 18)));
    }

    #[test]
    fn equal_weights_tie_break_by_index() {
        let mut a = Tensor::filled(19, 19, 0.5);
        for i in 0..19 {
            a.set(i, i, 0.0);
        }
        let e1 = topk_sparsify(&a, 2).unwrap();
        assert_eq!(e1, topk_sparsify(&a, 2).unwrap());
        assert_eq!(e1, union_oracle(&a, 2));
        assert!(e1.contains(&(0, 1)) && e1.contains(&(0, 2)) && e1.contains(&(1, 2)));
    }

    #[test]
    fn build_graph_is_deterministic_and_nested() {
        let e = epoch(noise_channels(5, 19, 640));
        let cfg = FeatureConfig::default();
        let g = build_graph(&e, &cfg, 5).unwrap();
        assert_eq!(g, build_graph(&e, &cfg, 5).unwrap());
        assert_eq!(g.label, Label::Mdd);
        assert_eq!(g.segment_index, 3);
        assert_eq!(g.node_features.shape(), (19, 14));
        let small = build_graph(&e, &cfg, 2).unwrap();
        let full = build_graph(&e, &cfg, 18).unwrap();
        assert!(small.edges.iter().all(|x| full.edges.contains(x)));
        assert!(small.edges.iter().all(|x| g.edges.contains(x)));
        for i in 0..19 {
            assert!(g.degree(i) >= 5);
            for j in 0..19 {
                let is_edge = g.edges.contains(&(i.min(j), i.max(j))) && i != j;
                assert_eq!(g.edge_weight(i, j) > 0.0, is_edge);
                assert_eq!(g.edge_weight(i, j), g.edge_weight(j, i));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn topk_matches_oracle(vals in prop::collection::vec(0.0f64..1.0, 171), k in 1usize..19) {
            let mut a = Tensor::zeros(19, 19);
            let mut it = vals.iter();
            for i in 0..19 {
                for j in i + 1..19 {
                    // quantise to force ties
                    let v = (it.next().unwrap() * 8.0).floor() / 8.0;
                    a.set(i, j, v);
                    a.set(j, i, v);
                }
            }
            let edges = topk_sparsify(&a, k).unwrap();
            prop_assert_eq!(&edges, &union_oracle(&a, k));
            for i in 0..19 {
                let deg = edges.iter().filter(|&&(p, q)| p == i || q == i).count();
                prop_assert!(deg >= k);
            }
        }

        #[test]
        fn plv_bounds_and_symmetry(
            p in prop::collection::vec(-10.0f64..10.0, 8..64),
            shift in -3.0f64..3.0,
        ) {
            let q: Vec<f64> = p.iter().enumerate().map(|(i, v)| v * 0.3 + shift * i as f64).collect();
            let a = plv_pair(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - plv_pair(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((plv_pair(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
