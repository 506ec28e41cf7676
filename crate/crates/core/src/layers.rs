use std::cell::RefCell;

use dreal_tensor::{BatchStats, Float, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Accumulated running statistics (evaluation).
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    /// Exponential moving average update; the variance is stored unbiased.
    pub fn update(&mut self, batch: &BatchStats<T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        let unbias = if batch.count > 1 {
            T::of(batch.count as f64 / (batch.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = keep * *r + m * b * unbias;
        }
    }
}

/// Everything a module needs while building its part of a forward graph.
pub struct ForwardCtx<'a, 'g, T: Float> {
    pub bound: &'a Bound<'g, T>,
    pub norm: NormMode,
    pub running: &'a [RunningStats<T>],
    /// Batch statistics observed in [`NormMode::Batch`], keyed by running-stat slot.
    pub observed: RefCell<Vec<(usize, BatchStats<T>)>>,
}

impl<'a, 'g, T: Float> ForwardCtx<'a, 'g, T> {
    pub fn new(bound: &'a Bound<'g, T>, norm: NormMode, running: &'a [RunningStats<T>]) -> Self {
        Self { bound, norm, running, observed: RefCell::new(Vec::new()) }
    }

    pub fn take_observed(&self) -> Vec<(usize, BatchStats<T>)> {
        std::mem::take(&mut self.observed.borrow_mut())
    }
}

pub fn he_normal<T: Float>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::of(normal.sample(rng)))
}

pub fn uniform<T: Float>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape.to_vec(), |_| T::of(dist.sample(rng)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [out_c, in_c, kernel, kernel];
        let weight = store.add(format!("{name}.weight"), group, he_normal(&shape, in_c * kernel * kernel, rng));
        Self { weight, stride, padding }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv2d(ctx.bound[self.weight], self.stride, self.padding)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Slot in the network's running statistics.
    pub stats: usize,
}

impl BatchNorm {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        running: &mut Vec<RunningStats<T>>,
        name: &str,
        group: ParamGroup,
        channels: usize,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Tensor::ones([channels]));
        let beta = store.add(format!("{name}.beta"), group, Tensor::zeros([channels]));
        running.push(RunningStats::new(channels));
        Self { gamma, beta, stats: running.len() - 1 }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (gamma, beta) = (ctx.bound[self.gamma], ctx.bound[self.beta]);
        match ctx.norm {
            NormMode::Batch => {
                let (y, stats) = x.batch_norm_train(gamma, beta, T::of(BN_EPS))?;
                ctx.observed.borrow_mut().push((self.stats, stats));
                Ok(y)
            }
            NormMode::Running => {
                let r = &ctx.running[self.stats];
                Ok(x.batch_norm_eval(gamma, beta, &r.mean, &r.var, T::of(BN_EPS))?)
            }
        }
    }
}

/// Fully connected layer `x W^T + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(in)`, zero bias.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), group, uniform(&[out_features, in_features], bound, rng));
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros([out_features]));
        Self { weight, bias }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &ForwardCtx<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.linear(ctx.bound[self.weight], Some(ctx.bound[self.bias]))?)
    }
}
