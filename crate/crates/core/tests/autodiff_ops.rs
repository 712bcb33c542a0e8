use grasens::autodiff::check::{check_gradients, CheckOptions};
use grasens::autodiff::{Graph, PadMode, Tensor, Var};
use grasens::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// `Σ y ⊙ r` for a fixed random `r`, so linear ops get non-trivial gradients.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let r = g.constant(normal(g.shape(y), &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Runs the finite-difference check on `SEEDS` random draws of `shapes`.
fn sweep<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| normal(s, &mut rng)).collect();
        let r = check_gradients(&inputs, CheckOptions::default(), |g, v| {
            let y = build(g, v)?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                project(g, y, seed)
            }
        })
        .unwrap();
        assert!(r.max_rel_err < TOL, "{name}, seed {seed}: {r:?}");
        worst = worst.max(r.max_rel_err);
    }
    eprintln!("{name}: worst relative error {worst:.2e}");
}

#[test]
fn conv2d_gradients() {
    sweep("conv2d", &[&[2, 5, 5], &[3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], 1, 1));
    sweep("conv2d strided", &[&[2, 6, 7], &[2, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], 2, 1));
    sweep("conv2d valid", &[&[1, 5, 4], &[2, 1, 2, 2]], |g, v| g.conv2d(v[0], v[1], 1, 0));
}

#[test]
fn deconv2d_gradients() {
    sweep("deconv2d", &[&[2, 3, 4], &[2, 3, 4, 4]], |g, v| g.deconv2d(v[0], v[1], 2));
    sweep("deconv2d s1", &[&[1, 3, 3], &[1, 2, 2, 2]], |g, v| g.deconv2d(v[0], v[1], 1));
}

#[test]
fn elementwise_gradients() {
    sweep("mul", &[&[2, 3, 3], &[2, 3, 3]], |g, v| g.mul(v[0], v[1]));
    sweep("mul channel gate", &[&[3, 2, 4], &[3, 1, 1]], |g, v| g.mul(v[0], v[1]));
    sweep("mul site gate", &[&[3, 2, 4], &[1, 2, 4]], |g, v| g.mul(v[0], v[1]));
    sweep("add", &[&[2, 3, 3], &[2, 3, 3]], |g, v| g.add(v[0], v[1]));
    sweep("add bias", &[&[2, 3, 3], &[2, 1, 1]], |g, v| g.add(v[0], v[1]));
    sweep("scale", &[&[2, 2, 2]], |g, v| Ok(g.scale(v[0], -1.7)));
    sweep("sigmoid", &[&[2, 3, 3]], |g, v| Ok(g.sigmoid(v[0])));
    sweep("relu", &[&[2, 3, 3]], |g, v| Ok(g.relu(v[0])));
}

#[test]
fn structural_gradients() {
    sweep("concat", &[&[1, 2, 3], &[2, 2, 3]], |g, v| g.concat_channels(v[0], v[1]));
    sweep("slice", &[&[4, 2, 3]], |g, v| g.slice_channels(v[0], 1, 2));
    sweep("reshape", &[&[2, 3, 2]], |g, v| g.reshape(v[0], &[3, 4]));
    sweep("sum", &[&[2, 3, 2]], |g, v| Ok(g.sum(v[0])));
    sweep("mean_spatial", &[&[3, 2, 5]], |g, v| g.mean_spatial(v[0]));
    sweep("pad reflect", &[&[2, 3, 4]], |g, v| g.pad(v[0], 2, 3, PadMode::Reflect));
    sweep("pad edge", &[&[2, 3, 4]], |g, v| g.pad(v[0], 1, 2, PadMode::Edge));
    sweep("subsample", &[&[2, 5, 5]], |g, v| g.subsample(v[0], 2));
}

#[test]
fn dense_gradients() {
    sweep("linear", &[&[5], &[3, 5], &[3]], |g, v| g.linear(v[0], v[1], v[2]));
    sweep("cross entropy", &[&[4]], |g, v| g.softmax_cross_entropy(v[0], 2));
}

#[test]
fn filtering_gradients() {
    sweep("depthwise", &[&[2, 6, 6], &[3, 3]], |g, v| g.depthwise(v[0], v[1], 2));
    sweep("softmax_groups", &[&[6, 2, 3]], |g, v| g.softmax_groups(v[0], 2));
    sweep("local_filter", &[&[4, 5, 6], &[18, 3, 4]], |g, v| g.local_filter(v[0], v[1], 3, 2, 1));
    sweep("local_filter strided", &[&[2, 6, 6], &[9, 4, 4]], |g, v| g.local_filter(v[0], v[1], 3, 1, 2));
}

#[test]
fn gabor_bank_gradients() {
    sweep("gabor_bank", &[&[2, 2], &[2, 2], &[2, 2], &[2, 2]], |g, v| {
        // Keep σ away from its floor so every input is in the smooth region.
        let s = g.mul(v[3], v[3])?;
        let half = g.constant(Tensor::full([2, 2], 0.5));
        let sigma = g.add(s, half)?;
        g.gabor_bank(v[0], v[1], v[2], sigma, 5)
    });
}

#[test]
fn chained_conv_sigmoid_sum() {
    sweep("conv→sigmoid→sum", &[&[2, 4, 4], &[2, 2, 3, 3]], |g, v| {
        let y = g.conv2d(v[0], v[1], 1, 1)?;
        let y = g.sigmoid(y);
        Ok(g.sum(y))
    });
}

#[test]
fn conv_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([1, 3, 3]));
    let k = g.constant(Tensor::full([1, 1, 1, 1], 2.0));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.0));

    let x = g.constant(Tensor::from_fn([1, 4, 4], |i| i as f64));
    let k = g.constant(Tensor::full([1, 1, 2, 2], 0.25));
    let y = g.conv2d(x, k, 2, 0).unwrap();
    assert_eq!(g.value(y).data(), &[2.5, 4.5, 10.5, 12.5]);
}

#[test]
fn one_hot_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [1usize, 3, 5] {
        let x = normal(&[3, 6, 5], &mut rng);
        let kernel = Tensor::from_fn([3, 3, k, k], |i| {
            let (o, rest) = (i / (3 * k * k), i % (3 * k * k));
            let (c, tap) = (rest / (k * k), rest % (k * k));
            if o == c && tap == (k * k) / 2 {
                1.0
            } else {
                0.0
            }
        });
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(kernel);
        let y = g.conv2d(xv, kv, 1, (k - 1) / 2).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }
}

#[test]
fn deconv_single_pixel_spread() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([1, 1, 1]));
    let k = g.constant(Tensor::ones([1, 1, 4, 4]));
    let y = g.deconv2d(x, k, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 1.0));
}

#[test]
fn deconv_is_adjoint_of_strided_conv() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal(&[1, 3, 3], &mut rng);
        let y = normal(&[1, 6, 6], &mut rng);
        let k = normal(&[1, 1, 4, 4], &mut rng);
        let mut g = Graph::new();
        let (xv, yv, kv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(k));
        let up = g.deconv2d(xv, kv, 2).unwrap();
        let down = g.conv2d(yv, kv, 2, 1).unwrap();
        let lhs = g.value(up).dot(&y);
        let rhs = x.dot(g.value(down));
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros([1]));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).data(), &[0.5]);

    let x = g.constant(Tensor::ones([2, 2, 2]));
    let m = g.constant(Tensor::new([2, 1, 1], vec![0.5, 2.0]).unwrap());
    let y = g.mul(x, m).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0, 2.0]);

    let bad = g.constant(Tensor::ones([2, 2, 1]));
    assert!(g.mul(x, bad).is_err());
}

#[test]
fn concat_slice_round_trip() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros([1, 2, 2]));
    let b = g.constant(Tensor::ones([1, 2, 2]));
    let c = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (p, q) = (normal(&[2, 3, 2], &mut rng), normal(&[3, 3, 2], &mut rng));
    let (pv, qv) = (g.constant(p.clone()), g.constant(q.clone()));
    let pq = g.concat_channels(pv, qv).unwrap();
    let p2 = g.slice_channels(pq, 0, 2).unwrap();
    let q2 = g.slice_channels(pq, 2, 3).unwrap();
    assert_eq!(g.value(p2), &p);
    assert_eq!(g.value(q2), &q);
}

#[test]
fn linear_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
    let eye = g.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let zero = g.constant(Tensor::zeros([3]));
    let y = g.linear(x, eye, zero).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5]);

    let w0 = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::new([2], vec![4.0, -1.0]).unwrap());
    let y = g.linear(x, w0, b).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, -1.0]);
}

#[test]
fn stop_gradient_blocks_one_path() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap());
    let s = g.stop_gradient(x);
    assert_eq!(g.value(s), g.value(x));
    let p = g.mul(s, x).unwrap();
    let l = g.sum(p);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, -2.0, 3.0]);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
    let l = g.sum(x);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let l = g.sum(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);

    // A second pass without reset accumulates; zero_grad resets.
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0, 12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    assert!(matches!(g.backward(sq), Err(grasens::Error::Usage(_))));
}

#[test]
fn gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = Graph::<f64>::new();
        let x = g.param(normal(&[2, 5, 5], &mut rng));
        let k = g.param(normal(&[3, 2, 3, 3], &mut rng));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        let y = g.sigmoid(y);
        let l = g.sum(y);
        g.backward(l).unwrap();
        (g.value(l).item(), g.grad_tensor(x), g.grad_tensor(k))
    };
    assert_eq!(run(), run());
}
