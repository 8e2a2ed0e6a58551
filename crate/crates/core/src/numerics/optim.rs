use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// One bias-corrected Adam update over every trainable group, followed by
/// clearing all gradients. `step` is 1-based.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, cfg: &AdamConfig, step: u64) {
    assert!(step >= 1, "adam step count is 1-based");
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let correction1 = T::lit(1.0 - cfg.beta1.powf(step as f64));
    let correction2 = T::lit(1.0 - cfg.beta2.powf(step as f64));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    for group in store.groups_mut() {
        if group.trainable {
            let values = group.value.data_mut();
            let grads = group.grad.data();
            let m = group.first_moment.data_mut();
            let v = group.second_moment.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        group.grad.fill(T::zero());
    }
}

/// Stateful wrapper tracking the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        adam_step(store, &self.config, self.step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseArray;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.add("x", DenseArray::from_vec(&[1, 1], vec![v]).unwrap());
        store
    }

    /// Scalar transcription of the update rule.
    fn oracle(theta: f64, grads: &[f64], cfg: &AdamConfig) -> f64 {
        let (mut m, mut v, mut x) = (0.0, 0.0, theta);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        x
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut store = scalar_store(0.0);
        store.grad_mut(crate::numerics::ParamId(0)).data_mut()[0] = 1.0;
        adam_step(&mut store, &cfg, 1);
        let x = store.groups()[0].value.data()[0];
        assert!((x + 0.1).abs() < 1e-8, "{x}");
        assert_eq!(x, oracle(0.0, &[1.0], &cfg));
        assert_eq!(store.groups()[0].grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut store = scalar_store(2.5);
        adam_step(&mut store, &AdamConfig::default(), 1);
        assert_eq!(store.groups()[0].value.data()[0], 2.5);
        assert_eq!(store.groups()[0].first_moment.data()[0], 0.0);
    }

    #[test]
    fn multi_step_matches_scalar_oracle() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let grads = [0.3, -1.2, 0.7, 0.0, 2.0];
        let mut opt = Adam::new(cfg);
        let mut store = scalar_store(1.0);
        for &g in &grads {
            store.grad_mut(crate::numerics::ParamId(0)).data_mut()[0] = g;
            opt.step(&mut store);
        }
        let got = store.groups()[0].value.data()[0];
        assert!((got - oracle(1.0, &grads, &cfg)).abs() < 1e-15);
    }

    #[test]
    fn frozen_groups_are_not_updated() {
        let mut store = scalar_store(1.0);
        store.groups_mut()[0].trainable = false;
        store.grad_mut(crate::numerics::ParamId(0)).data_mut()[0] = 5.0;
        adam_step(&mut store, &AdamConfig::default(), 1);
        assert_eq!(store.groups()[0].value.data()[0], 1.0);
    }
}
