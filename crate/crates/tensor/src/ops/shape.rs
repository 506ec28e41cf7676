use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::{broadcast_shape, Tensor};

impl<'g, T: Float> Var<'g, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, T>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let original = x.shape().to_vec();
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| vec![Some(g.reshape(original.clone()).expect("same element count"))])
        }))
    }

    /// Expands size-1 axes to `shape`.
    pub fn broadcast_to(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, T>> {
        let shape = shape.into();
        let x = self.value();
        if broadcast_shape(x.shape(), &shape)? != shape {
            return Err(TensorError::Broadcast { lhs: x.shape().to_vec(), rhs: shape });
        }
        let y = Tensor::zeros(shape).zip_map(&x, |_, v| v)?;
        let original = x.shape().to_vec();
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| vec![Some(g.sum_to_shape(&original).expect("broadcast source"))])
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Shape {
                op: "narrow",
                detail: format!("[{start}, {}) along axis {axis} of {shape:?}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let y = Tensor::from_vec(out_shape, data)?;
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(shape.clone());
                let d = dx.data_mut();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    d[base..base + len * inner].copy_from_slice(src);
                }
                vec![Some(dx)]
            })
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'g, T: Float>(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
    let first = parts.first().ok_or(TensorError::Shape { op: "concat", detail: "no inputs".into() })?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::Shape { op: "concat", detail: format!("axis {axis} for {base:?}") });
    }
    for v in &values {
        let s = v.shape();
        let compatible =
            s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::Shape { op: "concat", detail: format!("{s:?} vs {base:?} on axis {axis}") });
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = total;
    let y = Tensor::from_vec(shape, data)?;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.graph().record(y, parts, move || {
        Box::new(move |g, need| {
            let mut grads: Vec<Vec<T>> =
                shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gr, &len) in grads.iter_mut().zip(&lens) {
                    gr.extend_from_slice(&g.data()[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .zip(need)
                .map(|((d, s), &n)| n.then(|| Tensor::from_vec(s.clone(), d).expect("part shape")))
                .collect()
        })
    }))
}
