use dreal_tensor::ops::conv2d_reference;
use dreal_tensor::{concat, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Compares analytic gradients of a scalar function of several inputs
/// against central differences.
fn check<F>(inputs: &[Tensor<f64>], f: F)
where
    F: for<'g> Fn(&[Var<'g, f64>]) -> Var<'g, f64>,
{
    let graph = Graph::new();
    let leaves: Vec<_> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let loss = f(&leaves);
    let grads = graph.backward(loss, &leaves).unwrap();

    let eval = |values: &[Tensor<f64>]| {
        let g = Graph::inference();
        let vars: Vec<_> = values.iter().map(|t| g.constant(t.clone())).collect();
        f(&vars).value().item()
    };
    let h = 1e-6;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[i]);
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            diff += (a - numeric).powi(2);
            norm += a.powi(2).max(numeric.powi(2));
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        assert!(rel < 1e-6, "input {i}: relative gradient error {rel:e}");
    }
}

/// Projects onto fixed pseudo-random weights so every output element matters.
fn project<'g>(v: Var<'g, f64>) -> Var<'g, f64> {
    let shape = v.shape();
    let w = Tensor::from_fn(shape, |i| ((i * 7919 % 13) as f64 - 6.0) / 6.0);
    v.mul(v.graph().constant(w)).unwrap().sum_all()
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 1, 4], &mut rng).map(|x| x + 3.0);
    check(&[a.clone(), b.clone()], |v| project(v[0].mul(v[1]).unwrap()));
    check(&[a.clone(), b.clone()], |v| project(v[0].div(v[1]).unwrap()));
    check(&[a.clone(), b.clone()], |v| project(v[0].sub(v[1]).unwrap().sigmoid()));
    check(&[a.clone(), b.clone()], |v| project(v[1].add(v[0]).unwrap().tanh()));
    check(std::slice::from_ref(&a), |v| project(v[0].relu().sqr().scale(0.3).add_scalar(1.0)));
    check(&[b], |v| project(v[0].sqrt().neg()));
}

#[test]
fn reductions_and_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[2, 3, 5], &mut rng);
    let b = random(&[2, 2, 5], &mut rng);
    check(std::slice::from_ref(&a), |v| project(v[0].mean_axis(1).unwrap()));
    check(std::slice::from_ref(&a), |v| project(v[0].max_axis(2).unwrap()));
    check(std::slice::from_ref(&a), |v| project(v[0].max_axis(0).unwrap()));
    check(std::slice::from_ref(&a), |v| v[0].mean_all());
    check(&[a.clone(), b.clone()], |v| project(concat(&[v[0], v[1]], 1).unwrap()));
    check(std::slice::from_ref(&a), |v| project(v[0].narrow(1, 1, 2).unwrap().reshape([4, 5]).unwrap()));
    check(&[random(&[2, 1, 1], &mut rng)], |v| project(v[0].broadcast_to([2, 3, 4]).unwrap()));
}

#[test]
fn linear_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 5], &mut rng);
    let w = random(&[3, 5], &mut rng);
    let b = random(&[3], &mut rng);
    check(&[x.clone(), w.clone(), b], |v| project(v[0].linear(v[1], Some(v[2])).unwrap()));
    let m = random(&[5, 2], &mut rng);
    check(&[x, m], |v| project(v[0].matmul(v[1]).unwrap()));
}

#[test]
fn convolution_matches_reference_and_differentiates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 3, 7), (2, 0, 1)] {
        let x = random(&[2, 3, 6, 5], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let g = Graph::inference();
        let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), stride, pad).unwrap();
        let reference = conv2d_reference(&x, &w, stride, pad).unwrap();
        assert_eq!(y.shape(), reference.shape());
        for (a, b) in y.value().data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        check(&[x, w], |v| project(v[0].conv2d(v[1], stride, pad).unwrap()));
    }
}

#[test]
fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 2, 2, 3], &mut rng);
    let gamma = random(&[2], &mut rng);
    let beta = random(&[2], &mut rng);
    check(&[x.clone(), gamma.clone(), beta.clone()], |v| {
        project(v[0].batch_norm_train(v[1], v[2], 1e-5).unwrap().0)
    });
    check(&[x, gamma, beta], |v| {
        project(v[0].batch_norm_eval(v[1], v[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5).unwrap())
    });
}

#[test]
fn batch_norm_statistics() {
    let x = Tensor::from_vec([2, 1, 2], vec![1.0f64, 3.0, 5.0, 7.0]).unwrap();
    let g = Graph::inference();
    let (y, stats) = g
        .constant(x)
        .batch_norm_train(g.constant(Tensor::ones([1])), g.constant(Tensor::zeros([1])), 0.0)
        .unwrap();
    assert_eq!(stats.mean, vec![4.0]);
    assert_eq!(stats.var, vec![5.0]);
    assert_eq!(stats.count, 4);
    let mean: f64 = y.value().mean();
    assert!(mean.abs() < 1e-15);
}

#[test]
fn cross_entropy_gradient_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = random(&[4, 5], &mut rng);
    check(&[logits], |v| v[0].cross_entropy(&[0, 4, 2, 2]).unwrap());

    let g = Graph::<f64>::inference();
    let uniform = g.constant(Tensor::zeros([3, 10]));
    let loss = uniform.cross_entropy(&[1, 2, 3]).unwrap().value().item();
    assert!((loss - 10f64.ln()).abs() < 1e-15);
}

#[test]
fn backward_prunes_unrequested_paths() {
    let g = Graph::<f64>::new();
    let a = g.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap());
    let b = g.leaf(Tensor::from_vec([2], vec![3.0, 4.0]).unwrap());
    let loss = a.mul(b).unwrap().sum_all();
    let grads = g.backward(loss, &[a]).unwrap();
    assert_eq!(grads.get(&a).unwrap().data(), &[3.0, 4.0]);
    assert!(grads.get(&b).is_none());

    // gradient does not pass through a detached value
    let c = a.detach().mul(b).unwrap().sum_all();
    let grads = g.backward(c, &[a, b]).unwrap();
    assert!(grads.get(&a).is_none());
    assert_eq!(grads.get(&b).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn inference_graph_records_nothing() {
    let g = Graph::<f32>::inference();
    let a = g.leaf(Tensor::ones([3]));
    assert!(!a.is_tracked());
    let y = a.sigmoid().sum_all();
    assert!(g.backward(y, &[a]).unwrap().get(&a).is_none());
}
