use crate::error::Result;
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

// Fallible shape-checked arithmetic, so not the operator traits.
#[allow(clippy::should_implement_trait)]
impl<'g, T: Float> Var<'g, T> {
    fn unary(
        self,
        forward: impl Fn(T) -> T,
        // derivative expressed through (input, output)
        derivative: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let x = self.value();
        let y = x.map(forward);
        let out = std::rc::Rc::new(y.clone());
        self.graph().record(y, &[self], move || {
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| g * derivative(x, y))
                    .collect();
                vec![Some(Tensor::from_vec(g.shape().to_vec(), data).expect("same shape"))]
            })
        })
    }

    /// `max(x, 0)`, passing NaN through.
    pub fn relu(self) -> Var<'g, T> {
        self.unary(|x| if x < T::zero() { T::zero() } else { x }, |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sqr(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Square root whose derivative is taken as zero at zero, so that
    /// deviation pooling of a constant map stays differentiable.
    pub fn sqrt(self) -> Var<'g, T> {
        self.unary(
            |x| x.sqrt(),
            |_, y| if y > T::zero() { T::of(0.5) / y } else { T::zero() },
        )
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn scale(self, k: T) -> Var<'g, T> {
        self.unary(move |x| x * k, move |_, _| k)
    }

    pub fn add_scalar(self, k: T) -> Var<'g, T> {
        self.unary(move |x| x + k, |_, _| T::one())
    }

    fn binary(
        self,
        other: Var<'g, T>,
        forward: impl Fn(T, T) -> T,
        // partial derivatives given (a, b)
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, forward)?;
        Ok(self.graph().record(y, &[self, other], move || {
            Box::new(move |g, need| {
                let grad_for = |d: &dyn Fn(T, T) -> T, shape: &[usize]| {
                    // g * d(a, b), evaluated at the broadcast shape, then summed down
                    let local = a.zip_map(&b, d).expect("shapes validated in forward");
                    let full = g.zip_map(&local, |g, l| g * l).expect("broadcast shape");
                    full.sum_to_shape(shape).expect("broadcast source shape")
                };
                vec![
                    need[0].then(|| grad_for(&da, a.shape())),
                    need[1].then(|| grad_for(&db, b.shape())),
                ]
            })
        }))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.graph().record(y, &[self, other], move || {
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.sum_to_shape(&sa).expect("broadcast source shape")),
                    need[1].then(|| g.sum_to_shape(&sb).expect("broadcast source shape")),
                ]
            })
        }))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x * y, |_, b| b, |a, _| a)
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x / y, |_, b| T::one() / b, |a, b| -a / (b * b))
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
