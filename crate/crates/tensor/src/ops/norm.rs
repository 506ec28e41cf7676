use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Per-channel statistics of one training-mode normalization call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

/// (batch, channels, spatial extent) of an `[N, C, ...]` tensor.
fn layout(op: &'static str, shape: &[usize], affine: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 || affine != [shape[1]] {
        return Err(TensorError::Shape { op, detail: format!("input {shape:?} with affine {affine:?}") });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<'g, T: Float> Var<'g, T> {
    /// Normalizes each channel of an `[N, C, ...]` tensor with its batch
    /// statistics, then applies `gamma * x + beta`.
    pub fn batch_norm_train(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: T) -> Result<(Var<'g, T>, BatchStats<T>)> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let (n, c, s) = layout("batch_norm", x.shape(), gm.shape())?;
        layout("batch_norm", x.shape(), bt.shape())?;
        let count = n * s;
        let inv_count = T::one() / T::of(count as f64);
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ni in 0..n {
            for ci in 0..c {
                let plane = &xd[(ni * c + ci) * s..(ni * c + ci + 1) * s];
                mean[ci] += plane.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_count);
        for ni in 0..n {
            for ci in 0..c {
                let plane = &xd[(ni * c + ci) * s..(ni * c + ci + 1) * s];
                var[ci] += plane.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let r = (ni * c + ci) * s..(ni * c + ci + 1) * s;
                for ((h, o), &v) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xd[r]) {
                    *h = (v - mean[ci]) * inv_std[ci];
                    *o = gm.data()[ci] * *h + bt.data()[ci];
                }
            }
        }
        let stats = BatchStats { mean, var, count };
        let out = Tensor::from_vec(x.shape().to_vec(), y)?;
        let shape = x.shape().to_vec();
        let var = self.graph().record(out, &[self, gamma, beta], move || {
            Box::new(move |g, need| {
                let gd = g.data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let r = (ni * c + ci) * s..(ni * c + ci + 1) * s;
                        for (&gv, &h) in gd[r.clone()].iter().zip(&xhat[r]) {
                            sum_g[ci] += gv;
                            sum_gx[ci] += gv * h;
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); gd.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let k = gm.data()[ci] * inv_std[ci];
                            let mg = sum_g[ci] * inv_count;
                            let mgx = sum_gx[ci] * inv_count;
                            let r = (ni * c + ci) * s..(ni * c + ci + 1) * s;
                            for ((d, &gv), &h) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                                *d = k * (gv - mg - h * mgx);
                            }
                        }
                    }
                    Tensor::from_vec(shape.clone(), dx).expect("input shape")
                });
                vec![
                    dx,
                    need[1].then(|| Tensor::from_vec([c], sum_gx.clone()).expect("channels")),
                    need[2].then(|| Tensor::from_vec([c], sum_g.clone()).expect("channels")),
                ]
            })
        });
        Ok((var, stats))
    }

    /// Normalization with fixed (running) statistics: a per-channel affine map.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var<'g, T>> {
        let c = gamma.shape()[0];
        let shape = self.shape();
        layout("batch_norm", &shape, &[c])?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::Shape {
                op: "batch_norm",
                detail: format!("running statistics of length {} for {c} channels", running_mean.len()),
            });
        }
        let mut bshape = vec![1; shape.len()];
        bshape[1] = c;
        let g = self.graph();
        let mean = g.constant(Tensor::from_vec(bshape.clone(), running_mean.to_vec())?);
        let inv_std = g.constant(Tensor::from_vec(
            bshape.clone(),
            running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
        )?);
        let xhat = self.sub(mean)?.mul(inv_std)?;
        xhat.mul(gamma.reshape(bshape.clone())?)?.add(beta.reshape(bshape)?)
    }
}
