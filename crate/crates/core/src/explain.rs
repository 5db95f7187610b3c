//! Post-hoc mask explanations, group saliency profiles and attention maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::connectivity::BrainGraph;
use crate::error::{ExplainError, ModelError};
use crate::features::Feature;
use crate::model::{bce_on_tape, forward_input, forward_on_tape, sigmoid, GraphInput, ModelParams, Topology};
use crate::recording::{Label, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMaskMode {
    /// One entry per directed edge (`i -> j` and `j -> i` separately).
    Directed,
    /// One entry shared by both directions of an edge.
    Undirected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// L1 weight on the edge mask.
    pub alpha: f64,
    /// Entropy weight on the edge mask.
    pub beta: f64,
    /// L1 weight on the feature mask.
    pub gamma: f64,
    /// Entropy weight on the feature mask.
    pub delta: f64,
    /// L1 weight on the node mask.
    pub eta: f64,
    /// Entropy weight on the node mask.
    pub zeta: f64,
    pub steps: usize,
    pub lr: f64,
    pub init_logit: f64,
    pub edge_mode: EdgeMaskMode,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            alpha: 0.005,
            beta: 0.1,
            gamma: 0.005,
            delta: 0.1,
            eta: 0.005,
            zeta: 0.1,
            steps: 200,
            lr: 0.01,
            init_logit: 0.0,
            edge_mode: EdgeMaskMode::Directed,
        }
    }
}

impl ExplainConfig {
    fn coefficients(&self) -> [f64; 6] {
        [self.alpha, self.beta, self.gamma, self.delta, self.eta, self.zeta]
    }
}

/// Pre-sigmoid mask logits for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub mode: EdgeMaskMode,
    /// Edge each entry of `edge` refers to: `(src, dst)` in directed mode,
    /// `(i, j)` with `i < j` in undirected mode.
    pub edge_pairs: Vec<(usize, usize)>,
    pub edge: Vec<f64>,
    pub node: Vec<f64>,
    pub feature: Vec<f64>,
}

fn sigmoid_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&m| sigmoid(m)).collect()
}

impl MaskSet {
    /// Masks with every logit set to `value`.
    pub fn constant(graph: &BrainGraph, mode: EdgeMaskMode, value: f64) -> Result<Self, ModelError> {
        let edge_pairs = match mode {
            EdgeMaskMode::Directed => {
                let topo = Topology::from_edges(graph.n_nodes(), &graph.edges)?;
                topo.src.iter().zip(&topo.dst).map(|(&s, &d)| (s, d)).collect()
            }
            EdgeMaskMode::Undirected => graph.edges.clone(),
        };
        Ok(MaskSet {
            mode,
            edge: vec![value; edge_pairs.len()],
            edge_pairs,
            node: vec![value; graph.n_nodes()],
            feature: vec![value; graph.node_features.cols()],
        })
    }

    pub fn pi_edge(&self) -> Vec<f64> {
        sigmoid_all(&self.edge)
    }

    pub fn pi_node(&self) -> Vec<f64> {
        sigmoid_all(&self.node)
    }

    pub fn pi_feature(&self) -> Vec<f64> {
        sigmoid_all(&self.feature)
    }

    fn check(&self, graph: &BrainGraph, topo: &Topology) -> Result<(), ExplainError> {
        let n_edges = match self.mode {
            EdgeMaskMode::Directed => topo.n_directed(),
            EdgeMaskMode::Undirected => graph.edges.len(),
        };
        let shapes = [
            (self.edge.len(), n_edges, "edge"),
            (self.edge_pairs.len(), n_edges, "edge pair"),
            (self.node.len(), graph.n_nodes(), "node"),
            (self.feature.len(), graph.node_features.cols(), "feature"),
        ];
        for (got, want, what) in shapes {
            if got != want {
                return Err(ExplainError::ShapeMismatch(format!("{what} mask has {got} entries, graph needs {want}")));
            }
        }
        Ok(())
    }
}

/// For every directed edge of `topo`, the index of its undirected edge in
/// `edges`.
fn undirected_index(edges: &[(usize, usize)], topo: &Topology) -> Vec<usize> {
    topo.src
        .iter()
        .zip(&topo.dst)
        .map(|(&s, &d)| {
            edges
                .binary_search(&(s.min(d), s.max(d)))
                .expect("topology is built from the same edge list")
        })
        .collect()
}

/// Masked node matrix and per-directed-edge feature, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedGraph {
    pub x: Tensor,
    pub edge_attr: Tensor,
    /// Masked PLV matrix; zero wherever the graph has no edge.
    pub adjacency: Tensor,
}

struct MaskVars {
    edge: Var,
    node: Var,
    feature: Var,
}

/// Records the masked inputs on the tape: `x~ = pi_V (x (.) pi_F)` and
/// `e~ = pi_E A` per directed edge.
fn masked_on_tape(
    tape: &mut Tape,
    input: &GraphInput,
    undirected: Option<&[usize]>,
    vars: &MaskVars,
) -> Result<(Var, Var), ModelError> {
    let x = tape.constant(input.x.clone());
    let e = tape.constant(input.edge_attr.clone());
    let pf = tape.sigmoid(vars.feature)?;
    let pv = tape.sigmoid(vars.node)?;
    let pe = tape.sigmoid(vars.edge)?;
    let pe = match undirected {
        Some(index) => tape.gather_rows(pe, index)?,
        None => pe,
    };
    let xm = tape.mul_row(x, pf)?;
    let xm = tape.mul_col(xm, pv)?;
    let em = tape.mul(e, pe)?;
    Ok((xm, em))
}

fn mask_vars(tape: &mut Tape, masks: &MaskSet, trainable: bool) -> MaskVars {
    MaskVars {
        edge: tape.leaf(Tensor::column(&masks.edge), trainable),
        node: tape.leaf(Tensor::column(&masks.node), trainable),
        feature: tape.leaf(Tensor::row(&masks.feature), trainable),
    }
}

/// Applies the masks to the model-ready view of `graph` (features
/// standardised with the model's scaler).
pub fn apply_masks(model: &ModelParams, graph: &BrainGraph, masks: &MaskSet) -> Result<MaskedGraph, ExplainError> {
    let input = GraphInput::new(graph, &model.scaler)?;
    masks.check(graph, &input.topology)?;
    let index = (masks.mode == EdgeMaskMode::Undirected).then(|| undirected_index(&graph.edges, &input.topology));
    let mut tape = Tape::new();
    let vars = mask_vars(&mut tape, masks, false);
    let (x, e) = masked_on_tape(&mut tape, &input, index.as_deref(), &vars).map_err(ExplainError::from)?;
    let edge_attr = tape.value(e).clone();
    let n = graph.n_nodes();
    let mut adjacency = Tensor::zeros(n, n);
    for (k, (&d, &s)) in input.topology.dst.iter().zip(&input.topology.src).enumerate() {
        adjacency.set(d, s, edge_attr.data()[k]);
    }
    Ok(MaskedGraph {
        x: tape.value(x).clone(),
        edge_attr,
        adjacency,
    })
}

/// Model logit on the masked graph.
pub fn masked_logit(model: &ModelParams, graph: &BrainGraph, masks: &MaskSet) -> Result<f64, ExplainError> {
    let masked = apply_masks(model, graph, masks)?;
    let input = GraphInput {
        x: masked.x,
        edge_attr: masked.edge_attr,
        topology: Topology::from_edges(graph.n_nodes(), &graph.edges)?,
        target: graph.label.as_target(),
    };
    Ok(forward_input(model, &input, false)?.0)
}

/// Class the unmasked model assigns to `graph` (1 = MDD).
pub fn reference_label(model: &ModelParams, graph: &BrainGraph) -> Result<f64, ExplainError> {
    let input = GraphInput::new(graph, &model.scaler)?;
    let (z, _) = forward_input(model, &input, false)?;
    Ok(if sigmoid(z) >= 0.5 { 1.0 } else { 0.0 })
}

/// Mean binary entropy of `sigmoid(logits)` in nats, with `0 log 0 = 0`.
pub fn mean_bernoulli_entropy(pi: &[f64]) -> f64 {
    let h = |p: f64| {
        let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
        term(p) + term(1.0 - p)
    };
    pi.iter().map(|&p| h(p)).sum::<f64>() / pi.len().max(1) as f64
}

/// Regularisation value from mask logits.
pub fn regularization_loss(masks: &MaskSet, cfg: &ExplainConfig) -> f64 {
    let [a, b, g, d, e, z] = cfg.coefficients();
    let term = |logits: &[f64], l1: f64, ent: f64| {
        let pi = sigmoid_all(logits);
        l1 * pi.iter().sum::<f64>() + ent * mean_bernoulli_entropy(&pi)
    };
    term(&masks.edge, a, b) + term(&masks.feature, g, d) + term(&masks.node, e, z)
}

/// Taped `l1 * sum(pi) + ent * mean(H(pi))` for one logit tensor, using
/// `H = softplus(m) - pi m`.
fn reg_term(tape: &mut Tape, m: Var, l1: f64, ent: f64) -> Result<Var, ModelError> {
    let pi = tape.sigmoid(m)?;
    let sum = tape.sum(pi)?;
    let sum = tape.scale(sum, l1)?;
    let sp = tape.softplus(m)?;
    let pim = tape.mul(pi, m)?;
    let h = tape.sub(sp, pim)?;
    let h = tape.mean(h)?;
    let h = tape.scale(h, ent)?;
    Ok(tape.add(sum, h)?)
}

struct Objective {
    fid: Var,
    total: Var,
    logit: Var,
}

fn record_objective(
    tape: &mut Tape,
    model: &ModelParams,
    input: &GraphInput,
    undirected: Option<&[usize]>,
    vars: &MaskVars,
    target: f64,
    cfg: &ExplainConfig,
) -> Result<Objective, ModelError> {
    let params = model.register(tape, false);
    let (x, e) = masked_on_tape(tape, input, undirected, vars)?;
    let logit = forward_on_tape::<rand::rngs::ThreadRng>(tape, model, &params, x, e, &input.topology, None, None)?;
    let fid = bce_on_tape(tape, logit, target)?;
    let [a, b, g, d, eta, z] = cfg.coefficients();
    let re = reg_term(tape, vars.edge, a, b)?;
    let rf = reg_term(tape, vars.feature, g, d)?;
    let rv = reg_term(tape, vars.node, eta, z)?;
    let r = tape.add(re, rf)?;
    let r = tape.add(r, rv)?;
    let total = tape.add(fid, r)?;
    Ok(Objective { fid, total, logit })
}

/// `-log p(target | masked graph)`.
pub fn fidelity_loss(model: &ModelParams, graph: &BrainGraph, masks: &MaskSet, target: f64) -> Result<f64, ExplainError> {
    Ok(fidelity_and_grads(model, graph, masks, target)?.0)
}

/// Fidelity loss and its gradient with respect to the edge, node and
/// feature logits.
pub fn fidelity_and_grads(
    model: &ModelParams,
    graph: &BrainGraph,
    masks: &MaskSet,
    target: f64,
) -> Result<(f64, MaskSet), ExplainError> {
    let input = GraphInput::new(graph, &model.scaler)?;
    masks.check(graph, &input.topology)?;
    let index = (masks.mode == EdgeMaskMode::Undirected).then(|| undirected_index(&graph.edges, &input.topology));
    let mut tape = Tape::new();
    let vars = mask_vars(&mut tape, masks, true);
    let obj = record_objective(&mut tape, model, &input, index.as_deref(), &vars, target, &ExplainConfig::default())?;
    let value = tape.value(obj.fid).item();
    tape.backward(obj.fid).map_err(ModelError::from)?;
    let grad = |tape: &Tape, v: Var| tape.grad(v).map(|g| g.data().to_vec()).unwrap_or_default();
    let grads = MaskSet {
        edge: grad(&tape, vars.edge),
        node: grad(&tape, vars.node),
        feature: grad(&tape, vars.feature),
        ..masks.clone()
    };
    Ok((value, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub subject_id: String,
    pub segment_index: usize,
    pub label: Label,
    /// Class predicted on the unmasked graph (1 = MDD).
    pub reference: f64,
    pub masks: MaskSet,
    pub unmasked_prob: f64,
    pub masked_prob: f64,
    /// The masked graph still gets the reference class.
    pub faithful: bool,
    /// Share of all mask entries with `0.2 < pi < 0.8`.
    pub undecided_fraction: f64,
}

/// Adam on the mask logits for a fixed number of steps. Model parameters
/// are read only.
pub fn optimize_masks(model: &ModelParams, graph: &BrainGraph, cfg: &ExplainConfig) -> Result<Explanation, ExplainError> {
    let input = GraphInput::new(graph, &model.scaler)?;
    let (z0, _) = forward_input(model, &input, false)?;
    let unmasked_prob = sigmoid(z0);
    let reference = if unmasked_prob >= 0.5 { 1.0 } else { 0.0 };
    let mut masks = MaskSet::constant(graph, cfg.edge_mode, cfg.init_logit)?;
    let index = (cfg.edge_mode == EdgeMaskMode::Undirected).then(|| undirected_index(&graph.edges, &input.topology));
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars = mask_vars(&mut tape, &masks, true);
        let obj = record_objective(&mut tape, model, &input, index.as_deref(), &vars, reference, cfg)?;
        tape.backward(obj.total).map_err(ModelError::from)?;
        let take = |tape: &mut Tape, v: Var| {
            let (r, c) = tape.shape(v);
            tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(r, c))
        };
        let grads = [take(&mut tape, vars.edge), take(&mut tape, vars.node), take(&mut tape, vars.feature)];
        let mut edge = Tensor::column(&masks.edge);
        let mut node = Tensor::column(&masks.node);
        let mut feature = Tensor::row(&masks.feature);
        adam_step(&mut [&mut edge, &mut node, &mut feature], &grads, &mut state, &adam).map_err(ModelError::from)?;
        masks.edge = edge.into_vec();
        masks.node = node.into_vec();
        masks.feature = feature.into_vec();
    }
    let masked_prob = {
        let mut tape = Tape::new();
        let vars = mask_vars(&mut tape, &masks, false);
        let obj = record_objective(&mut tape, model, &input, index.as_deref(), &vars, reference, cfg)?;
        sigmoid(tape.value(obj.logit).item())
    };
    let all: Vec<f64> = [masks.pi_edge(), masks.pi_node(), masks.pi_feature()].concat();
    let undecided = all.iter().filter(|&&p| p > 0.2 && p < 0.8).count();
    Ok(Explanation {
        subject_id: graph.subject_id.clone(),
        segment_index: graph.segment_index,
        label: graph.label,
        reference,
        faithful: (masked_prob >= 0.5) == (reference == 1.0),
        undecided_fraction: undecided as f64 / all.len().max(1) as f64,
        masks,
        unmasked_prob,
        masked_prob,
    })
}

/// [`optimize_masks`] over many graphs in parallel, results in input order.
pub fn explain_graphs(
    model: &ModelParams,
    graphs: &[&BrainGraph],
    cfg: &ExplainConfig,
) -> Result<Vec<Explanation>, ExplainError> {
    graphs.par_iter().map(|g| optimize_masks(model, g, cfg)).collect()
}

/// Mean feature and node saliency of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub feature: Vec<f64>,
    pub node: Vec<f64>,
}

fn group_name(label: Label) -> &'static str {
    label.name()
}

/// Element-wise mean of `pi_F` and `pi_V` over the masks whose label is
/// `group`.
pub fn aggregate_group(masks: &[&MaskSet], labels: &[Label], group: Label) -> Result<GroupProfile, ExplainError> {
    let members: Vec<&MaskSet> = masks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == group)
        .map(|(m, _)| *m)
        .collect();
    if members.is_empty() {
        return Err(ExplainError::EmptyGroup(group_name(group)));
    }
    let mean = |f: &dyn Fn(&MaskSet) -> Vec<f64>| {
        let mut acc = f(members[0]);
        for m in &members[1..] {
            acc.iter_mut().zip(f(m)).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= members.len() as f64);
        acc
    };
    Ok(GroupProfile {
        feature: mean(&MaskSet::pi_feature),
        node: mean(&MaskSet::pi_node),
    })
}

/// Symmetric `n x n` edge saliency of one mask set: the larger of the two
/// directions of each edge, zero for absent pairs.
pub fn edge_saliency(masks: &MaskSet, n_nodes: usize) -> Tensor {
    let mut out = Tensor::zeros(n_nodes, n_nodes);
    for (&(i, j), p) in masks.edge_pairs.iter().zip(masks.pi_edge()) {
        let v = out.get(i, j).max(p);
        out.set(i, j, v);
        out.set(j, i, v);
    }
    out
}

/// Group mean of [`edge_saliency`].
pub fn aggregate_edges(masks: &[&MaskSet], labels: &[Label], group: Label, n_nodes: usize) -> Result<Tensor, ExplainError> {
    let mut acc = Tensor::zeros(n_nodes, n_nodes);
    let mut count = 0usize;
    for (m, _) in masks.iter().zip(labels).filter(|(_, &l)| l == group) {
        acc.add_assign(&edge_saliency(m, n_nodes));
        count += 1;
    }
    if count == 0 {
        return Err(ExplainError::EmptyGroup(group_name(group)));
    }
    acc.scale_assign(1.0 / count as f64);
    Ok(acc)
}

/// Mean attention matrix (row = receiving node) of `layer` over `graphs`.
/// Entries for node pairs without an edge are 0.
pub fn extract_attention(model: &ModelParams, graphs: &[&BrainGraph], layer: usize) -> Result<Tensor, ExplainError> {
    let first = graphs.first().ok_or(ExplainError::EmptyGroup("attention"))?;
    if layer >= model.layers.len() {
        return Err(ExplainError::ShapeMismatch(format!(
            "layer {layer} requested from a {}-layer model",
            model.layers.len()
        )));
    }
    let n = first.n_nodes();
    let per_graph = graphs
        .par_iter()
        .map(|g| {
            if g.n_nodes() != n {
                return Err(ExplainError::ShapeMismatch(format!("graphs with {n} and {} nodes", g.n_nodes())));
            }
            let input = GraphInput::new(g, &model.scaler)?;
            let (_, trace) = forward_input(model, &input, true)?;
            let trace = trace.expect("trace was requested");
            let mut m = Tensor::zeros(n, n);
            for (k, (&d, &s)) in trace.dst.iter().zip(&trace.src).enumerate() {
                m.set(d, s, trace.layers[layer].alpha[k]);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, ExplainError>>()?;
    let mut acc = Tensor::zeros(n, n);
    for m in &per_graph {
        acc.add_assign(m);
    }
    acc.scale_assign(1.0 / per_graph.len() as f64);
    Ok(acc)
}

/// `hc - mdd`, element-wise.
pub fn attention_difference(hc: &Tensor, mdd: &Tensor) -> Result<Tensor, ExplainError> {
    if hc.shape() != mdd.shape() {
        return Err(ExplainError::ShapeMismatch(format!("{:?} vs {:?}", hc.shape(), mdd.shape())));
    }
    let mut out = hc.clone();
    out.data_mut().iter_mut().zip(mdd.data()).for_each(|(a, b)| *a -= b);
    Ok(out)
}

/// Saliency of one label group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSaliency {
    pub label: Label,
    pub n_graphs: usize,
    pub feature: Vec<f64>,
    pub node: Vec<f64>,
    pub edge: Tensor,
    /// Mean attention per layer.
    pub attention: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyBundle {
    pub feature_names: Vec<String>,
    pub channel_names: Vec<String>,
    /// Groups with at least one explained graph, HC first.
    pub groups: Vec<GroupSaliency>,
    /// HC minus MDD per layer; empty unless both groups are present.
    pub attention_difference: Vec<Tensor>,
    pub n_explained: usize,
    pub n_faithful: usize,
}

impl SaliencyBundle {
    pub fn group(&self, label: Label) -> Option<&GroupSaliency> {
        self.groups.iter().find(|g| g.label == label)
    }
}

/// Groups explanations by true label and computes every profile.
pub fn build_bundle(
    model: &ModelParams,
    graphs: &[&BrainGraph],
    explanations: &[Explanation],
) -> Result<SaliencyBundle, ExplainError> {
    if graphs.len() != explanations.len() {
        return Err(ExplainError::ShapeMismatch(format!(
            "{} graphs, {} explanations",
            graphs.len(),
            explanations.len()
        )));
    }
    let n_nodes = graphs.first().map_or(CHANNELS.len(), |g| g.n_nodes());
    let masks: Vec<&MaskSet> = explanations.iter().map(|e| &e.masks).collect();
    let labels: Vec<Label> = explanations.iter().map(|e| e.label).collect();
    let mut groups = Vec::new();
    for label in Label::ALL {
        let members: Vec<&BrainGraph> = graphs.iter().zip(&labels).filter(|(_, &l)| l == label).map(|(g, _)| *g).collect();
        if members.is_empty() {
            continue;
        }
        let profile = aggregate_group(&masks, &labels, label)?;
        let attention = (0..model.layers.len())
            .map(|l| extract_attention(model, &members, l))
            .collect::<Result<Vec<_>, _>>()?;
        groups.push(GroupSaliency {
            label,
            n_graphs: members.len(),
            feature: profile.feature,
            node: profile.node,
            edge: aggregate_edges(&masks, &labels, label, n_nodes)?,
            attention,
        });
    }
    let attention_difference = match groups.as_slice() {
        [hc, mdd] => hc
            .attention
            .iter()
            .zip(&mdd.attention)
            .map(|(a, b)| attention_difference(a, b))
            .collect::<Result<Vec<_>, _>>()?,
        _ => Vec::new(),
    };
    Ok(SaliencyBundle {
        feature_names: Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
        channel_names: CHANNELS.iter().map(|s| s.to_string()).collect(),
        groups,
        attention_difference,
        n_explained: explanations.len(),
        n_faithful: explanations.iter().filter(|e| e.faithful).count(),
    })
}

/// Feature indices sorted by decreasing saliency (ties by index).
pub fn feature_ranking(saliency: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..saliency.len()).collect();
    idx.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    idx
}
