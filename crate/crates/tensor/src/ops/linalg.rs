use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Strides of a row-major `rows x cols` matrix, optionally read transposed.
fn strides(cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

fn matrix_dims(op: &'static str, t: &Tensor<impl Float>) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(TensorError::Rank { op, expected: 2, shape: s.to_vec() }),
    }
}

/// `op(a) * op(b)` where `op` optionally transposes a stored row-major matrix.
pub fn matmul<T: Float>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = matrix_dims("matmul", a)?;
    let (br, bc) = matrix_dims("matmul", b)?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            detail: format!("inner dimensions {k} and {k2} (lhs {:?}, rhs {:?})", a.shape(), b.shape()),
        });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a.data(), strides(ac, ta), b.data(), strides(bc, tb), T::zero(), &mut out, (n as isize, 1));
    Tensor::from_vec([m, n], out)
}

impl<'g, T: Float> Var<'g, T> {
    fn matmul_impl(self, other: Var<'g, T>, transpose_rhs: bool) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let y = matmul(&a, false, &b, transpose_rhs)?;
        Ok(self.graph().record(y, &[self, other], move || {
            Box::new(move |g, need| {
                // y = a b      : da = g b^T, db = a^T g
                // y = a b^T    : da = g b,   db = g^T a
                let da = need[0].then(|| matmul(g, false, &b, !transpose_rhs).expect("forward dims"));
                let db = need[1].then(|| {
                    if transpose_rhs {
                        matmul(g, true, &a, false).expect("forward dims")
                    } else {
                        matmul(&a, true, g, false).expect("forward dims")
                    }
                });
                vec![da, db]
            })
        }))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.matmul_impl(other, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`, the layout of a fully connected layer.
    pub fn matmul_t(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.matmul_impl(other, true)
    }

    /// `x W^T + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let y = self.matmul_t(weight)?;
        match bias {
            Some(b) => {
                let out = b.shape()[0];
                y.add(b.reshape([1, out])?)
            }
            None => Ok(y),
        }
    }
}
