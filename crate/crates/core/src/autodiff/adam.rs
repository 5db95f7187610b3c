use serde::{Deserialize, Serialize};

use crate::error::AutodiffError;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            left: (params.len(), 0),
            right: (grads.len(), 0),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len()
        || state.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape())
    {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step(state)",
            left: (state.m.len(), 0),
            right: (grads.len(), 0),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::row(&[1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Tensor::zeros(1, 3)], &mut state, &AdamConfig::default())
                .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_matches_scalar_reference() {
        // Scalar reference written out independently of the tensor loop.
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let g = 0.7;
        let (mut w, mut m, mut v) = (2.0_f64, 0.0_f64, 0.0_f64);
        let mut p = Tensor::scalar(2.0);
        let mut state = AdamState::new();
        for t in 1..=40 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(t));
            let vh = v / (1.0 - 0.999_f64.powi(t));
            w -= 0.05 * mh / (vh.sqrt() + 1e-8);
            adam_step(&mut [&mut p], &[Tensor::scalar(g)], &mut state, &cfg).unwrap();
            assert!((p.item() - w).abs() < 1e-10, "step {t}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut w = Tensor::scalar(0.0);
        let mut state = AdamState::new();
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (w.item() - 3.0));
            adam_step(&mut [&mut w], &[g], &mut state, &cfg).unwrap();
        }
        assert!((w.item() - 3.0).abs() < 1e-3, "w = {}", w.item());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let err = adam_step(
            &mut [&mut p],
            &[Tensor::zeros(1, 2)],
            &mut AdamState::new(),
            &AdamConfig::default(),
        );
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch { .. })));
    }
}
