use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Splits a shape around `axis` into (outer, len, inner) extents.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Shape { op, detail: format!("axis {axis} out of range for {shape:?}") });
    }
    Ok(())
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

/// Sum along one axis, keeping it with extent 1.
pub fn sum_axis<T: Float>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for l in 0..len {
            let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(row) {
                *d += s;
            }
        }
    }
    Tensor::from_vec(keepdim(x.shape(), axis), out).expect("reduced shape")
}

impl<'g, T: Float> Var<'g, T> {
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        check_axis("sum_axis", x.shape(), axis)?;
        let y = sum_axis(&x, axis);
        let shape = x.shape().to_vec();
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| {
                let full = Tensor::zeros(shape.clone());
                vec![Some(full.zip_map(g, |_, g| g).expect("broadcast back"))]
            })
        }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let n = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis)?.scale(T::one() / T::of(n as f64)))
    }

    /// Maximum along one axis (kept with extent 1). Gradient flows to the
    /// first maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        check_axis("max_axis", x.shape(), axis)?;
        let (outer, len, inner) = split(x.shape(), axis);
        let src = x.data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = src[(o * len + l) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] || l == 0 {
                        out[slot] = v;
                        arg[slot] = (o * len + l) * inner + i;
                    }
                }
            }
        }
        let y = Tensor::from_vec(keepdim(x.shape(), axis), out).expect("reduced shape");
        let shape = x.shape().to_vec();
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(shape.clone());
                let d = dx.data_mut();
                for (&src, &g) in arg.iter().zip(g.data()) {
                    d[src] += g;
                }
                vec![Some(dx)]
            })
        }))
    }

    pub fn sum_all(self) -> Var<'g, T> {
        let x = self.value();
        let y = Tensor::scalar(x.sum());
        let shape = x.shape().to_vec();
        self.graph().record(y, &[self], move || {
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))])
        })
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(T::one() / T::of(n as f64))
    }
}
