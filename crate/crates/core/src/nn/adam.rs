use ndarray::{Array1, Array2};

use super::{Gradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over flat parameter storage. `step` is the
/// 1-based index of this update.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moment accumulators shaped like an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        let zeros: Vec<_> = Gradients::zeros_like(model).layers;
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update to `model` and bumps its step counter.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        for (k, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[k];
            let (mw, mb) = &mut self.first[k];
            let (vw, vb) = &mut self.second[k];
            adam_update(
                layer.weights.as_slice_mut().expect("standard layout"),
                gw.as_standard_layout().as_slice().expect("standard layout"),
                mw.as_slice_mut().expect("standard layout"),
                vw.as_slice_mut().expect("standard layout"),
                self.step,
                &self.config,
            );
            adam_update(
                layer.bias.as_slice_mut().expect("contiguous"),
                gb.as_slice().expect("contiguous"),
                mb.as_slice_mut().expect("contiguous"),
                vb.as_slice_mut().expect("contiguous"),
                self.step,
                &self.config,
            );
        }
        model.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg);
        assert!((p[0] + cfg.lr / (1.0 + cfg.eps)).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_moves_monotonically() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[0.5], &mut m, &mut v, 1, &cfg);
        let after_one = p[0];
        adam_update(&mut p, &[0.5], &mut m, &mut v, 2, &cfg);
        assert!(after_one < 1.0 && p[0] < after_one);
    }
}
