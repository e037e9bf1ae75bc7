use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; weight decay enters as an L2 term on the gradient.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || m.len() != p.numel() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let AdamConfig { lr, weight_decay, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j] + weight_decay * *w;
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, [&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros([3])], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::zeros([3]);
        let cfg = AdamConfig { lr: 1e-3, weight_decay: 0.0, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, [&p]);
        let g = Tensor::new([3], vec![0.5, -2.0, 1e-3]).unwrap();
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut st).unwrap();
        for (w, gv) in p.data().iter().zip(g.data()) {
            let expect = -1e-3 * gv / (gv.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-15);
            assert!((w + 1e-3 * gv.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Tensor::new([1], vec![2.0]).unwrap();
        let mut st = AdamState::new(AdamConfig { weight_decay: 0.1, ..AdamConfig::default() }, [&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros([1])], &mut st).unwrap();
        assert!(p.data()[0] < 2.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = Tensor::zeros([2]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros([3])], &mut st).is_err());
    }
}
