//! Edge-gated graph attention classifier with feature mixing, a virtual
//! node and triple pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::connectivity::BrainGraph;
use crate::error::{AutodiffError, ModelError};
use crate::features::{FeatureScaler, N_FEATURES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// One entry per message-passing layer.
    pub hidden_dims: Vec<usize>,
    pub gate_hidden: usize,
    /// Hidden widths of the classification head (the output width is 1).
    pub head_dims: Vec<usize>,
    pub attention_slope: f64,
    pub gate_slope: f64,
    pub elu_alpha: f64,
    pub ln_eps: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: N_FEATURES,
            hidden_dims: vec![64, 64],
            gate_hidden: 8,
            head_dims: vec![64, 16],
            attention_slope: 0.2,
            gate_slope: 0.2,
            elu_alpha: 1.0,
            ln_eps: 1e-5,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("need at least one layer with positive width");
        }
        if self.gate_hidden == 0 || self.head_dims.contains(&0) {
            return bad("gate and head widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive");
        }
        Ok(())
    }
}

/// Weights of one message-passing layer. Projections are stored
/// input-major (`d_in x d_out`) so that row embeddings multiply on the left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub proj: Tensor,
    /// `(2 d + 1) x 1`: target half, source half, edge feature weight.
    pub attn: Tensor,
    pub gate_w1: Tensor,
    pub gate_w2: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
    pub mix_w1: Tensor,
    pub mix_w2: Tensor,
    pub vn_w: Tensor,
    pub vn_b: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// Alternating weight, bias pairs; the last pair maps to one logit.
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
    /// Input standardisation fitted on the training graphs.
    pub scaler: FeatureScaler,
}

impl ModelParams {
    /// Glorot-uniform weights, unit layer-norm gain, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden_dims.len());
        let mut d_in = config.input_dim;
        for &d in &config.hidden_dims {
            let h = config.gate_hidden;
            layers.push(LayerParams {
                proj: Tensor::glorot(d_in, d, rng),
                attn: Tensor::glorot(2 * d + 1, 1, rng),
                gate_w1: Tensor::glorot(1, h, rng),
                gate_w2: Tensor::glorot(h, 1, rng),
                ln_gamma: Tensor::filled(1, d, 1.0),
                ln_beta: Tensor::zeros(1, d),
                mix_w1: Tensor::glorot(d, 2 * d, rng),
                mix_w2: Tensor::glorot(2 * d, d, rng),
                vn_w: Tensor::glorot(d, d, rng),
                vn_b: Tensor::zeros(1, d),
            });
            d_in = d;
        }
        let mut widths = vec![3 * d_in];
        widths.extend(&config.head_dims);
        widths.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            weights.push(Tensor::glorot(w[0], w[1], rng));
            biases.push(Tensor::zeros(1, w[1]));
        }
        Ok(ModelParams {
            config: config.clone(),
            layers,
            head: HeadParams { weights, biases },
            scaler: FeatureScaler::identity(config.input_dim),
        })
    }

    /// Every learnable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([
                &l.proj, &l.attn, &l.gate_w1, &l.gate_w2, &l.ln_gamma, &l.ln_beta, &l.mix_w1,
                &l.mix_w2, &l.vn_w, &l.vn_b,
            ]);
        }
        for (w, b) in self.head.weights.iter().zip(&self.head.biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend([
                &mut l.proj,
                &mut l.attn,
                &mut l.gate_w1,
                &mut l.gate_w2,
                &mut l.ln_gamma,
                &mut l.ln_beta,
                &mut l.mix_w1,
                &mut l.mix_w2,
                &mut l.vn_w,
                &mut l.vn_b,
            ]);
        }
        for (w, b) in self.head.weights.iter_mut().zip(&mut self.head.biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Names matching [`ModelParams::tensors`], for diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.layers.len() {
            for n in [
                "proj", "attn", "gate_w1", "gate_w2", "ln_gamma", "ln_beta", "mix_w1", "mix_w2",
                "vn_w", "vn_b",
            ] {
                out.push(format!("layer{i}.{n}"));
            }
        }
        for i in 0..self.head.weights.len() {
            out.push(format!("head.w{i}"));
            out.push(format!("head.b{i}"));
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every tensor on `tape`, as trainable leaves when
    /// `trainable` is set and as constants otherwise.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect()
    }
}

/// Directed message-passing structure of a graph: each undirected edge
/// appears twice, ordered by target then source.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub n_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl Topology {
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut directed: Vec<(usize, usize)> = edges
            .iter()
            .flat_map(|&(i, j)| [(j, i), (i, j)])
            .collect();
        directed.sort_unstable();
        directed.dedup();
        let mut has_in = vec![false; n_nodes];
        for &(d, _) in &directed {
            has_in[d] = true;
        }
        if let Some(node) = has_in.iter().position(|&h| !h) {
            return Err(ModelError::IsolatedNode(node));
        }
        Ok(Topology {
            n_nodes,
            dst: directed.iter().map(|&(d, _)| d).collect(),
            src: directed.iter().map(|&(_, s)| s).collect(),
        })
    }

    pub fn n_directed(&self) -> usize {
        self.src.len()
    }
}

/// Model-ready view of a graph: standardised features, directed edges and
/// the edge feature of every directed edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub x: Tensor,
    pub edge_attr: Tensor,
    pub topology: Topology,
    pub target: f64,
}

impl GraphInput {
    pub fn new(graph: &BrainGraph, scaler: &FeatureScaler) -> Result<Self, ModelError> {
        let topology = Topology::from_edges(graph.n_nodes(), &graph.edges)?;
        let attr: Vec<f64> = topology
            .dst
            .iter()
            .zip(&topology.src)
            .map(|(&d, &s)| graph.adjacency.get(d, s))
            .collect();
        if scaler.mean.len() != graph.node_features.cols() {
            return Err(ModelError::InputDimMismatch {
                expected: scaler.mean.len(),
                got: graph.node_features.cols(),
            });
        }
        Ok(GraphInput {
            x: scaler.transform(&graph.node_features),
            edge_attr: Tensor::column(&attr),
            topology,
            target: graph.label.as_target(),
        })
    }
}

/// Per-layer internals of one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    /// Attention coefficient per directed edge (aligned with the topology).
    pub alpha: Vec<f64>,
    pub gate: Vec<f64>,
    pub embeddings: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub layers: Vec<LayerTrace>,
    pub g_mean: Vec<f64>,
    pub g_add: Vec<f64>,
    pub g_v: Vec<f64>,
    pub logit: f64,
}

/// Inverted dropout on node embeddings.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// Tape handles of the quantities the pooling stage consumes.
struct Pooled {
    logit: Var,
    g_mean: Var,
    g_add: Var,
    g_v: Var,
}

fn check_input(cfg: &ModelConfig, tape: &Tape, x: Var, edge_attr: Var, topo: &Topology) -> Result<(), ModelError> {
    let (n, f) = tape.shape(x);
    if f != cfg.input_dim {
        return Err(ModelError::InputDimMismatch {
            expected: cfg.input_dim,
            got: f,
        });
    }
    if n != topo.n_nodes {
        return Err(AutodiffError::ShapeMismatch {
            op: "model input",
            left: (n, f),
            right: (topo.n_nodes, cfg.input_dim),
        }
        .into());
    }
    if tape.shape(edge_attr) != (topo.n_directed(), 1) {
        return Err(AutodiffError::ShapeMismatch {
            op: "edge features",
            left: tape.shape(edge_attr),
            right: (topo.n_directed(), 1),
        }
        .into());
    }
    Ok(())
}

/// Records the forward pass on `tape` and returns the logit (1x1).
///
/// `params` are the handles returned by [`ModelParams::register`]; `x` is the
/// standardised `n x d_0` node matrix and `edge_attr` holds one edge feature
/// per directed edge of `topo`.
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &ModelParams,
    params: &[Var],
    x: Var,
    edge_attr: Var,
    topo: &Topology,
    mut dropout: Option<Dropout<'_, R>>,
    mut trace: Option<&mut ForwardTrace>,
) -> Result<Var, ModelError> {
    let cfg = &model.config;
    check_input(cfg, tape, x, edge_attr, topo)?;
    let n = topo.n_nodes;
    let n_layers = model.layers.len();
    let mut h = x;
    let mut v_prime = None;
    if let Some(t) = trace.as_deref_mut() {
        t.src = topo.src.clone();
        t.dst = topo.dst.clone();
        t.layers.clear();
    }
    for (l, p) in params.chunks(10).take(n_layers).enumerate() {
        let [proj, attn, gw1, gw2, gamma, beta, mw1, mw2, vw, vb] = p else {
            unreachable!("ten tensors per layer")
        };
        // edge-gated attention
        let wh = tape.matmul(h, *proj)?;
        let wh_dst = tape.gather_rows(wh, &topo.dst)?;
        let wh_src = tape.gather_rows(wh, &topo.src)?;
        let cat = tape.concat_cols(&[wh_dst, wh_src, edge_attr])?;
        let score = tape.matmul(cat, *attn)?;
        let score = tape.leaky_relu(score, cfg.attention_slope)?;
        let alpha = tape.segment_softmax(score, &topo.dst)?;
        let gate_h = tape.matmul(edge_attr, *gw1)?;
        let gate_h = tape.leaky_relu(gate_h, cfg.gate_slope)?;
        let gate = tape.matmul(gate_h, *gw2)?;
        let gate = tape.sigmoid(gate)?;
        let coef = tape.mul(alpha, gate)?;
        let msg = tape.mul_col(wh_src, coef)?;
        let agg = tape.scatter_add_rows(msg, &topo.dst, n)?;
        let hl = tape.elu(agg, cfg.elu_alpha)?;
        // feature mixing
        let ln = tape.layer_norm(hl, cfg.ln_eps)?;
        let ln = tape.mul_row(ln, *gamma)?;
        let ln = tape.add_row(ln, *beta)?;
        let mix = tape.matmul(ln, *mw1)?;
        let mix = tape.silu(mix)?;
        let mix = tape.matmul(mix, *mw2)?;
        let z = tape.add(hl, mix)?;
        // virtual node
        let v = tape.mean_rows(z)?;
        let vp = tape.matmul(v, *vw)?;
        let vp = tape.add_row(vp, *vb)?;
        let vp = tape.silu(vp)?;
        let mut out = tape.add_row(z, vp)?;
        if let Some(t) = trace.as_deref_mut() {
            t.layers.push(LayerTrace {
                alpha: tape.value(alpha).data().to_vec(),
                gate: tape.value(gate).data().to_vec(),
                embeddings: tape.value(out).clone(),
            });
        }
        if l + 1 < n_layers {
            if let Some(d) = dropout.as_mut().filter(|d| d.rate > 0.0) {
                let (r, c) = tape.shape(out);
                let keep = 1.0 - d.rate;
                let mask: Vec<f64> = (0..r * c)
                    .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::from_vec(r, c, mask));
                out = tape.mul(out, mask)?;
            }
        }
        h = out;
        v_prime = Some(vp);
    }
    let head = &params[10 * n_layers..];
    let pooled = pool_and_classify(tape, h, v_prime.expect("at least one layer"), head)?;
    if let Some(t) = trace {
        t.g_mean = tape.value(pooled.g_mean).data().to_vec();
        t.g_add = tape.value(pooled.g_add).data().to_vec();
        t.g_v = tape.value(pooled.g_v).data().to_vec();
        t.logit = tape.value(pooled.logit).item();
    }
    Ok(pooled.logit)
}

fn pool_and_classify(tape: &mut Tape, h: Var, v_prime: Var, head: &[Var]) -> Result<Pooled, ModelError> {
    let g_mean = tape.mean_rows(h)?;
    let g_add = tape.sum_rows(h)?;
    let mut a = tape.concat_cols(&[g_mean, g_add, v_prime])?;
    let n_dense = head.len() / 2;
    for (i, wb) in head.chunks(2).enumerate() {
        a = tape.matmul(a, wb[0])?;
        a = tape.add_row(a, wb[1])?;
        if i + 1 < n_dense {
            a = tape.relu(a)?;
        }
    }
    Ok(Pooled {
        logit: a,
        g_mean,
        g_add,
        g_v: v_prime,
    })
}

/// Gate of a single edge feature: `sigmoid(w2 . leaky(w1 e))`.
pub fn edge_gate(edge_feature: f64, layer: &LayerParams, slope: f64) -> f64 {
    let z: f64 = layer
        .gate_w1
        .data()
        .iter()
        .zip(layer.gate_w2.data())
        .map(|(&w1, &w2)| {
            let a = w1 * edge_feature;
            w2 * if a >= 0.0 { a } else { slope * a }
        })
        .sum();
    sigmoid(z)
}

/// Numerically stable per-example binary cross-entropy on a logit:
/// `softplus(z) - y z`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) + (-logit.abs()).exp().ln_1p() - target * logit
}

/// Mean binary cross-entropy over a batch of logits.
pub fn bce_loss(logits: &[f64], targets: &[f64]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| bce_with_logit(z, y))
        .sum::<f64>()
        / logits.len().max(1) as f64
}

/// Taped `softplus(z) - y z` for a single 1x1 logit.
pub fn bce_on_tape(tape: &mut Tape, logit: Var, target: f64) -> Result<Var, AutodiffError> {
    let sp = tape.softplus(logit)?;
    let yz = tape.scale(logit, target)?;
    tape.sub(sp, yz)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inference-mode logit and, optionally, the internal trace.
pub fn forward_input(
    model: &ModelParams,
    input: &GraphInput,
    record_trace: bool,
) -> Result<(f64, Option<ForwardTrace>), ModelError> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let x = tape.constant(input.x.clone());
    let e = tape.constant(input.edge_attr.clone());
    let mut trace = record_trace.then(ForwardTrace::default);
    let logit = forward_on_tape::<rand::rngs::ThreadRng>(
        &mut tape,
        model,
        &params,
        x,
        e,
        &input.topology,
        None,
        trace.as_mut(),
    )?;
    Ok((tape.value(logit).item(), trace))
}

/// Probability of the positive (MDD) class for a graph.
pub fn model_forward(
    graph: &BrainGraph,
    model: &ModelParams,
    record_trace: bool,
) -> Result<(f64, Option<ForwardTrace>), ModelError> {
    let input = GraphInput::new(graph, &model.scaler)?;
    let (logit, trace) = forward_input(model, &input, record_trace)?;
    Ok((sigmoid(logit), trace))
}

/// Loss and parameter gradients of one graph, scaled by `weight`.
pub fn loss_and_grads<R: Rng + ?Sized>(
    model: &ModelParams,
    input: &GraphInput,
    weight: f64,
    dropout: Option<Dropout<'_, R>>,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let x = tape.constant(input.x.clone());
    let e = tape.constant(input.edge_attr.clone());
    let logit = forward_on_tape(&mut tape, model, &params, x, e, &input.topology, dropout, None)?;
    let loss = bce_on_tape(&mut tape, logit, input.target)?;
    let loss_value = tape.value(loss).item();
    let loss = tape.scale(loss, weight)?;
    tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|&p| {
            tape.take_grad(p)
                .unwrap_or_else(|| Tensor::zeros(tape.shape(p).0, tape.shape(p).1))
        })
        .collect();
    Ok((loss_value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::Label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring_graph(n: usize, seed: u64) -> BrainGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = Tensor::uniform(n, N_FEATURES, 1.0, &mut rng);
        let mut plv = Tensor::zeros(n, n);
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let k = (i + 3) % n;
            for m in [j, k] {
                if m != i {
                    let (a, b) = (i.min(m), i.max(m));
                    if !edges.contains(&(a, b)) {
                        edges.push((a, b));
                        let w: f64 = rng.random_range(0.1..1.0);
                        plv.set(a, b, w);
                        plv.set(b, a, w);
                    }
                }
            }
        }
        edges.sort_unstable();
        BrainGraph::from_parts(feats, &plv, edges, Label::Mdd, "s".into(), 0)
    }

    fn model(seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn parameter_inventory_is_consistent() {
        let mut m = model(1);
        let n = m.tensors().len();
        assert_eq!(n, 2 * 10 + 6);
        assert_eq!(m.tensor_names().len(), n);
        assert_eq!(m.tensors_mut().len(), n);
        assert_eq!(m.layers[0].proj.shape(), (14, 64));
        assert_eq!(m.layers[1].attn.shape(), (129, 1));
        assert_eq!(m.head.weights[0].shape(), (192, 64));
        assert_eq!(m.head.weights[2].shape(), (16, 1));
    }

    #[test]
    fn forward_is_deterministic_and_traced() {
        let g = ring_graph(19, 2);
        let m = model(3);
        let (p1, t1) = model_forward(&g, &m, true).unwrap();
        let (p2, _) = model_forward(&g, &m, false).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 < 1.0);
        let t = t1.unwrap();
        assert_eq!(t.layers.len(), 2);
        for layer in &t.layers {
            let mut sums = vec![0.0; 19];
            for (a, &d) in layer.alpha.iter().zip(&t.dst) {
                sums[d] += a;
            }
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9));
            assert!(layer.gate.iter().all(|&g| g > 0.0 && g < 1.0));
        }
        assert_eq!(t.g_mean.len(), 64);
        assert!((sigmoid(t.logit) - p1).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_is_rejected() {
        let mut g = ring_graph(5, 1);
        g.edges.retain(|&(i, j)| i != 4 && j != 4);
        assert!(matches!(
            GraphInput::new(&g, &FeatureScaler::identity(14)),
            Err(ModelError::IsolatedNode(4))
        ));
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut m = model(4);
        for w in &mut m.head.weights {
            w.scale_assign(0.0);
        }
        let (p, _) = model_forward(&ring_graph(19, 5), &m, false).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!(bce_with_logit(20.0, 1.0) < 1e-8);
        assert!(bce_with_logit(800.0, 0.0).is_finite());
        let naive = |z: f64, y: f64| {
            let p = 1.0 / (1.0 + (-z).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        for (z, y) in [(-3.2, 0.0), (1.7, 1.0), (0.4, 0.0), (-0.9, 1.0)] {
            assert!((bce_with_logit(z, y) - naive(z, y)).abs() < 1e-9);
        }
        assert!((bce_loss(&[0.0, 0.0], &[1.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn grads_cover_every_parameter() {
        let g = ring_graph(19, 6);
        let m = model(7);
        let input = GraphInput::new(&g, &m.scaler).unwrap();
        let (loss, grads) = loss_and_grads::<ChaCha8Rng>(&m, &input, 1.0, None).unwrap();
        assert!(loss > 0.0);
        for ((gr, t), name) in grads.iter().zip(m.tensors()).zip(m.tensor_names()) {
            assert_eq!(gr.shape(), t.shape(), "{name}");
            assert!(gr.data().iter().any(|v| *v != 0.0), "{name} has zero gradient");
        }
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let g = ring_graph(19, 8);
        let m = model(9);
        let input = GraphInput::new(&g, &m.scaler).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (with_drop, _) = loss_and_grads(
            &m,
            &input,
            1.0,
            Some(Dropout {
                rate: 0.2,
                rng: &mut rng,
            }),
        )
        .unwrap();
        let (plain, _) = loss_and_grads::<ChaCha8Rng>(&m, &input, 1.0, None).unwrap();
        assert_ne!(with_drop, plain);
        let (logit, _) = forward_input(&m, &input, false).unwrap();
        assert!((bce_with_logit(logit, 1.0) - plain).abs() < 1e-12);
    }
}
