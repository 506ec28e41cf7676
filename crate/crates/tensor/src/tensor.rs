use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::float::Float;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Shape resulting from broadcasting two shapes of equal rank.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::Broadcast { lhs: a.to_vec(), rhs: b.to_vec() });
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(TensorError::Broadcast { lhs: a.to_vec(), rhs: b.to_vec() }),
        })
        .collect()
}

/// Strides of `src` viewed as broadcast to `out` (zero along expanded axes).
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let base = contiguous_strides(src);
    src.iter()
        .zip(out)
        .zip(base)
        .map(|((&s, &o), st)| if s == o { st } else { 0 })
        .collect()
}

/// Visits every output position of `shape` in row-major order, yielding the
/// matching offsets into operands with the given (possibly zero) strides.
pub(crate) fn for_each_broadcast<F: FnMut(usize, usize, usize)>(
    shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: F,
) {
    let rank = shape.len();
    let total = numel(shape);
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = shape[rank - 1];
    let (ia, ib) = (a_strides[rank - 1], b_strides[rank - 1]);
    let mut index = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = 0usize;
    loop {
        for j in 0..inner {
            f(out + j, oa + j * ia, ob + j * ib);
        }
        out += inner;
        if out >= total {
            break;
        }
        // odometer increment over the outer axes
        let mut axis = rank - 1;
        loop {
            axis -= 1;
            index[axis] += 1;
            oa += a_strides[axis];
            ob += b_strides[axis];
            if index[axis] < shape[axis] {
                break;
            }
            oa -= a_strides[axis] * shape[axis];
            ob -= b_strides[axis] * shape[axis];
            index[axis] = 0;
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::ElementCount { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let offset = index
            .iter()
            .zip(contiguous_strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum::<usize>();
        self.data[offset]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(TensorError::Reshape { from: self.shape.clone(), to: shape });
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    pub fn into_reshaped(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(TensorError::Reshape { from: self.shape, to: shape });
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise binary map with equal-rank broadcasting.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self { shape: self.shape.clone(), data });
        }
        let shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let mut data = vec![T::zero(); numel(&shape)];
        for_each_broadcast(&shape, &sa, &sb, |o, a, b| data[o] = f(self.data[a], other.data[b]));
        Ok(Self { shape, data })
    }

    /// Sums a broadcast result back down to `shape` (the inverse of broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let full = broadcast_shape(shape, &self.shape)?;
        if full != self.shape {
            return Err(TensorError::Broadcast { lhs: shape.to_vec(), rhs: self.shape.clone() });
        }
        let dst = broadcast_strides(shape, &self.shape);
        let src = contiguous_strides(&self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        for_each_broadcast(&self.shape, &src, &dst, |_, s, d| out[d] += self.data[s]);
        Ok(Self { shape: shape.to_vec(), data: out })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element type, e.g. `f64` reference values to `f32`.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::of(x.to_f64())).collect() }
    }

    /// Row-wise softmax of a `[rows, cols]` tensor.
    pub fn softmax_rows(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(TensorError::Rank { op: "softmax_rows", expected: 2, shape: self.shape.clone() });
        }
        let cols = self.shape[1];
        let mut data = self.data.clone();
        for row in data.chunks_mut(cols.max(1)) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Row-wise argmax of a `[rows, cols]` tensor; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(TensorError::Rank { op: "argmax_rows", expected: 2, shape: self.shape.clone() });
        }
        let cols = self.shape[1];
        Ok(self
            .data
            .chunks(cols.max(1))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    /// Selects rows (first-axis slices) in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let per = self.data.len() / self.shape[0].max(1);
        let mut data = Vec::with_capacity(per * rows.len());
        for &r in rows {
            data.extend_from_slice(&self.data[r * per..(r + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { shape, data }
    }
}
