use dreal_tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `d = g + λ p`, `v = μ v + d`, `p -= η v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(num_params: usize, momentum: f64) -> Self {
        Self { momentum, velocity: vec![None; num_params] }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, id: ParamId, grad: &Tensor<T>, lr: f64, weight_decay: f64) {
        let (mu, wd, lr) = (T::of(self.momentum), T::of(weight_decay), T::of(lr));
        let param = store.get_mut(id);
        let slot = &mut self.velocity[id.0];
        let first = slot.is_none();
        let v = slot.get_or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
        for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
            let d = g + wd * *p;
            *v = if first { d } else { mu * *v + d };
            *p -= lr * *v;
        }
    }

    pub fn num_params(&self) -> usize {
        self.velocity.len()
    }
}

/// Step decay: `initial * factor^k` after the k-th listed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    #[serde(default = "default_rate")]
    pub initial: f64,
    #[serde(default = "default_decay_epochs")]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_rate() -> f64 {
    0.1
}

fn default_decay_epochs() -> Vec<usize> {
    vec![30, 45]
}

fn default_factor() -> f64 {
    0.1
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: default_rate(), decay_epochs: default_decay_epochs(), factor: default_factor() }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    #[test]
    fn step_decay() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0), 0.1);
        assert!((s.rate(30) - 0.01).abs() < 1e-15);
        assert!((s.rate(59) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", ParamGroup::Backbone, Tensor::from_vec([1], vec![1.0]).unwrap());
        let mut sgd = Sgd::new(1, 0.9);
        let g = Tensor::from_vec([1], vec![1.0]).unwrap();
        sgd.step(&mut store, id, &g, 0.1, 0.0);
        assert!((store.get(id).data()[0] - 0.9).abs() < 1e-15);
        sgd.step(&mut store, id, &g, 0.1, 0.0);
        // v = 0.9 * 1 + 1
        assert!((store.get(id).data()[0] - (0.9 - 0.19)).abs() < 1e-15);
    }
}
