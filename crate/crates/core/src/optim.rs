//! AdamW: Adam moments with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    /// PyTorch defaults.
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state for a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

/// One parameter tensor, its gradient, and whether weight decay applies.
pub struct Slot<'a, T> {
    pub param: &'a mut [T],
    pub grad: &'a [T],
    pub decay: bool,
}

impl<T: Scalar> AdamW<T> {
    /// State for tensors of the given sizes, in the order they will be passed to [`AdamW::step`].
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, slots: &mut [Slot<'_, T>], lr: f64) {
        assert_eq!(
            slots.len(),
            self.m.len(),
            "optimizer built for a different parameter list"
        );
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        let b1 = T::cast(c.beta1);
        let b2 = T::cast(c.beta2);
        let one = T::one();
        let step_size = T::cast(lr / bc1);
        let inv_sqrt_bc2 = T::cast(1.0 / num_traits::Float::sqrt(bc2));
        let eps = T::cast(c.eps);
        let decay = T::cast(1.0 - lr * c.weight_decay);
        for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(slot.param.len(), m.len());
            for i in 0..m.len() {
                let g = slot.grad[i];
                if slot.decay {
                    slot.param[i] = slot.param[i] * decay;
                }
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let denom = v[i].sqrt() * inv_sqrt_bc2 + eps;
                slot.param[i] = slot.param[i] - step_size * m[i] / denom;
            }
        }
    }
}
