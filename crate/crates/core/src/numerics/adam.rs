use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Float> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    /// Parameters without a gradient keep their value; their moments are
    /// left untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &[(String, Tensor<T>)],
    ) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(epsilon);
        for (name, grad) in grads {
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid("adam_step", format!("no parameter named {name}")))?;
            if param.shape() != grad.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "{name}: parameter {:?}, gradient {:?}",
                        param.shape(),
                        grad.shape()
                    ),
                ));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); grad.numel()], vec![T::zero(); grad.numel()]));
            let mut values = param.to_vec();
            for (((p, &g), m), v) in values
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
            *param = Tensor::new(param.shape(), values)?.ensure_finite(name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::new([1], vec![v]).unwrap())])
    }

    fn grad(g: f64) -> Vec<(String, Tensor<f64>)> {
        vec![("w".to_string(), Tensor::new([1], vec![g]).unwrap())]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.3, -7.0, 1e-3] {
            let mut p = single(1.0);
            let mut adam = AdamState::new(AdamConfig::default());
            adam.step(&mut p, &grad(g)).unwrap();
            let delta = p["w"].item() - 1.0;
            // m_hat = g, v_hat = g^2: delta = -lr * g / (|g| + eps)
            let expected = -2e-4 * g / (g.abs() + 1e-7);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert!((delta + 2e-4 * g.signum()).abs() < 2e-4 * 1e-7 / g.abs() + 1e-15);
            assert_eq!(adam.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        let mut p = single(0.25);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p["w"].item(), 0.25);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn hand_iterated_scalar_steps() {
        let gs = [0.5, -0.2, 0.9, 0.0, -1.3];
        let cfg = AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        };
        // reference: textbook Adam written out longhand
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (i, g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
        }
        let mut p = single(2.0);
        let mut adam = AdamState::new(cfg);
        for g in gs {
            adam.step(&mut p, &grad(g)).unwrap();
        }
        assert!((p["w"].item() - x).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let bad = vec![("w".to_string(), Tensor::new([2], vec![1.0, 1.0]).unwrap())];
        assert!(adam.step(&mut p, &bad).is_err());
    }
}
