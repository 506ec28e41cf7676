use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

impl<'g, T: Float> Var<'g, T> {
    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// `[batch, classes]` logits, computed through a stable log-softmax.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'g, T>> {
        let logits = self.value();
        let (n, k) = match logits.shape() {
            &[n, k] if n == labels.len() => (n, k),
            s => {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    detail: format!("logits {s:?} with {} labels", labels.len()),
                })
            }
        };
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Shape { op: "cross_entropy", detail: format!("label {bad} for {k} classes") });
        }
        let probs = logits.softmax_rows()?;
        let mut total = T::zero();
        for (row, &label) in logits.data().chunks(k).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += lse - row[label];
        }
        let inv_n = T::one() / T::of(n as f64);
        let y = Tensor::scalar(total * inv_n);
        let labels = labels.to_vec();
        Ok(self.graph().record(y, &[self], move || {
            Box::new(move |g, _| {
                let scale = g.item() * inv_n;
                let mut d = probs.clone();
                for (row, &label) in d.data_mut().chunks_mut(k).zip(&labels) {
                    row[label] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![Some(d)]
            })
        }))
    }
}
