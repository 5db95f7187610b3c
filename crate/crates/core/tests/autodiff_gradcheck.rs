//! Central-difference checks for every differentiable primitive.

use expanet_core::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use expanet_core::error::AutodiffError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Op = dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

const H: f64 = 1e-5;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Loss `sum(f(inputs) * weights)` with fixed random weights, so every
/// output entry contributes to the check.
fn weighted_loss(f: &Op, inputs: &[Tensor], weights: &Option<Tensor>) -> (f64, Option<Tensor>, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let (r, c) = tape.shape(out);
    let w = weights.clone().unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        random(r, c, -1.0, 1.0, &mut rng)
    });
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).item();
    tape.backward(loss).unwrap();
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v).0, tape.shape(v).1)))
        .collect();
    (value, Some(w), grads)
}

fn gradcheck(name: &str, inputs: Vec<Tensor>, f: &Op) {
    let (_, w, grads) = weighted_loss(f, &inputs, &None);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= H;
            let fd = (weighted_loss(f, &plus, &w).0 - weighted_loss(f, &minus, &w).0) / (2.0 * H);
            let an = grads[k].data()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    println!("{name}: worst relative error {worst:.2e}");
    assert!(worst < 1e-6, "{name}: relative error {worst}");
}

#[test]
fn primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut r = |rows, cols| random(rows, cols, -1.0, 1.0, &mut rng);
    let cases: Vec<(&str, Vec<Tensor>, Box<Op>)> = vec![
        ("matmul", vec![r(3, 4), r(4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![r(3, 2), r(3, 2)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(3, 2), r(3, 2)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(3, 2), r(3, 2)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![r(4, 3), r(1, 3)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("mul_row", vec![r(4, 3), r(1, 3)], Box::new(|t, v| t.mul_row(v[0], v[1]))),
        ("mul_col", vec![r(4, 3), r(4, 1)], Box::new(|t, v| t.mul_col(v[0], v[1]))),
        ("scale", vec![r(2, 3)], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("add_scalar", vec![r(2, 3)], Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        (
            "concat_cols",
            vec![r(3, 2), r(3, 1), r(3, 3)],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1], v[2]])),
        ),
        ("slice_cols", vec![r(3, 5)], Box::new(|t, v| t.slice_cols(v[0], 1, 4))),
        (
            "gather_rows",
            vec![r(4, 3)],
            Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 1, 2])),
        ),
        (
            "scatter_add_rows",
            vec![r(6, 2)],
            Box::new(|t, v| t.scatter_add_rows(v[0], &[1, 0, 1, 3, 3, 1], 4)),
        ),
        ("sum", vec![r(3, 4)], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![r(3, 4)], Box::new(|t, v| t.mean(v[0]))),
        ("sum_rows", vec![r(3, 4)], Box::new(|t, v| t.sum_rows(v[0]))),
        ("mean_rows", vec![r(3, 4)], Box::new(|t, v| t.mean_rows(v[0]))),
        ("exp", vec![r(3, 3)], Box::new(|t, v| t.exp(v[0]))),
        (
            "log",
            vec![random(3, 3, 0.5, 1.5, &mut ChaCha8Rng::seed_from_u64(1))],
            Box::new(|t, v| t.log(v[0])),
        ),
        ("sigmoid", vec![r(3, 3)], Box::new(|t, v| t.sigmoid(v[0]))),
        ("silu", vec![r(3, 3)], Box::new(|t, v| t.silu(v[0]))),
        ("softplus", vec![r(3, 3)], Box::new(|t, v| t.softplus(v[0]))),
        ("relu", vec![r(3, 3)], Box::new(|t, v| t.relu(v[0]))),
        ("leaky_relu", vec![r(3, 3)], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
        ("elu", vec![r(3, 3)], Box::new(|t, v| t.elu(v[0], 1.0))),
        ("layer_norm", vec![r(4, 5)], Box::new(|t, v| t.layer_norm(v[0], 1e-5))),
        (
            "segment_softmax",
            vec![r(7, 2)],
            Box::new(|t, v| t.segment_softmax(v[0], &[0, 0, 1, 1, 1, 2, 0])),
        ),
    ];
    for (name, inputs, f) in cases {
        gradcheck(name, inputs, f.as_ref());
    }
}

#[test]
fn composite_expression_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![random(5, 4, -1.0, 1.0, &mut rng), random(4, 3, -1.0, 1.0, &mut rng)];
    gradcheck(
        "composite",
        inputs,
        &|t: &mut Tape, v: &[Var]| {
            let a = t.matmul(v[0], v[1])?;
            let b = t.layer_norm(a, 1e-5)?;
            let c = t.silu(b)?;
            let d = t.segment_softmax(c, &[0, 1, 0, 1, 1])?;
            let e = t.scatter_add_rows(d, &[1, 0, 1, 0, 0], 2)?;
            t.mean_rows(e)
        },
    );
}

#[test]
fn segment_softmax_is_normalised() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let seg = [2, 0, 1, 2, 0, 0, 1, 2];
    let x = tape.constant(random(8, 3, -20.0, 20.0, &mut rng));
    let y = tape.segment_softmax(x, &seg).unwrap();
    let out = tape.value(y);
    for c in 0..3 {
        let mut sums = [0.0; 3];
        for (r, &s) in seg.iter().enumerate() {
            assert!(out.get(r, c) >= 0.0);
            sums[s] += out.get(r, c);
        }
        assert!(sums.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w0 = random(3, 3, -1.0, 1.0, &mut rng);
    let (a, b) = (0.7, -2.3);
    let grad_of = |ca: f64, cb: f64| {
        let mut tape = Tape::new();
        let w = tape.param(w0.clone());
        let l1 = tape.sigmoid(w).unwrap();
        let l1 = tape.sum(l1).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let l2 = tape.mean(sq).unwrap();
        let l1 = tape.scale(l1, ca).unwrap();
        let l2 = tape.scale(l2, cb).unwrap();
        let total = tape.add(l1, l2).unwrap();
        tape.backward(total).unwrap();
        tape.grad(w).unwrap().clone()
    };
    let combined = grad_of(a, b);
    let mut separate = grad_of(a, 0.0);
    separate.add_assign(&grad_of(0.0, b));
    assert!(combined.max_abs_diff(&separate) < 1e-9);
}

#[test]
fn adam_matches_scalar_reference() {
    let cfg = AdamConfig::default();
    let mut state = AdamState::new();
    let mut w = Tensor::scalar(0.5);
    let (mut m, mut v, mut w_ref) = (0.0f64, 0.0f64, 0.5f64);
    for t in 1..=50 {
        let g = 0.3 * (t as f64).sin();
        adam_step(&mut [&mut w], &[Tensor::scalar(g)], &mut state, &cfg).unwrap();
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        w_ref -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        assert!((w.item() - w_ref).abs() < 1e-10);
    }
}
