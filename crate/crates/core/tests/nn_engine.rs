mod common;

use common::*;
use rand::Rng;
use rll_core::nn::{
    forward, forward_trace, gradients, loss, Activation, Layer, LossKind, Mode, NetworkSpec,
    Targets, WeightSnapshot,
};
use rll_core::rng::rng_from;
use rll_core::{Error, Tensor};

#[test]
fn identity_dense_layer_returns_input() {
    let spec = NetworkSpec::new(
        vec![4],
        vec![Layer::Dense { inputs: 4, outputs: 4, bias: false }],
        LossKind::SquareLoss,
    );
    let mut w = WeightSnapshot::init(&spec, 0).unwrap();
    let arr = w.get_mut("0.weight").unwrap();
    arr.data.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 5 == 0 { 1.0 } else { 0.0 });
    let x = random_tensor(vec![3, 4], 1, 2.0);
    let y = forward(&spec, &w, &x, Mode::Eval).unwrap();
    assert_eq!(y, x);
}

fn channel_moments(t: &Tensor, ch: usize) -> (f64, f64) {
    let (n, c) = (t.shape()[0], t.shape()[1]);
    let sp: usize = t.shape()[2..].iter().product();
    let mut vals = Vec::new();
    for s in 0..n {
        let base = s * c * sp + ch * sp;
        vals.extend_from_slice(&t.data()[base..base + sp]);
    }
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

fn bn_probe(eps: f64) -> (NetworkSpec, WeightSnapshot) {
    // Conv feeding a batch norm whose output is exposed through a dense
    // identity readout of the flattened features would mix channels, so the
    // normalized activations are read from the trace instead.
    let mut spec = NetworkSpec::new(
        vec![2, 6, 6],
        vec![
            Layer::Conv3x3Stride2 { in_ch: 2, out_ch: 3, bias: true },
            Layer::BatchNorm { channels: 3, affine: false },
            Layer::Activation { activation: Activation::Polynomial { coefficients: vec![0.0, 1.0] } },
            Layer::Dense { inputs: 27, outputs: 2, bias: false },
        ],
        LossKind::CrossEntropy,
    );
    spec.bn_eps = eps;
    let w = WeightSnapshot::init(&spec, 5).unwrap();
    (spec, w)
}

#[test]
fn batch_norm_train_mode_normalizes_each_channel() {
    let (spec, w) = bn_probe(0.0);
    for seed in 0..10 {
        let x = random_tensor(vec![7, 2, 6, 6], seed, 3.0);
        let trace = forward_trace(&spec, &w, &x, Mode::Train).unwrap();
        // Input of the identity activation is the normalized tensor.
        let normalized = Tensor::new(vec![7, 3, 3, 3], trace.activation_inputs()[0].1.to_vec()).unwrap();
        for ch in 0..3 {
            let (mean, var) = channel_moments(&normalized, ch);
            assert!(mean.abs() <= 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-8, "var {var}");
        }
    }
}

#[test]
fn batch_norm_default_epsilon_shrinks_variance_predictably() {
    let (spec, w) = bn_probe(1e-5);
    let x = random_tensor(vec![5, 2, 6, 6], 11, 1.0);
    let trace = forward_trace(&spec, &w, &x, Mode::Train).unwrap();
    let normalized = Tensor::new(vec![5, 3, 3, 3], trace.activation_inputs()[0].1.to_vec()).unwrap();
    for (ch, st) in trace.batch_stats[0].var.iter().enumerate() {
        let (mean, var) = channel_moments(&normalized, ch);
        assert!(mean.abs() <= 1e-10);
        assert!((var - st / (st + 1e-5)).abs() <= 1e-12);
    }
}

#[test]
fn train_mode_batch_norm_rejects_single_sample() {
    let (spec, w) = bn_probe(1e-5);
    let x = random_tensor(vec![1, 2, 6, 6], 0, 1.0);
    assert!(matches!(forward(&spec, &w, &x, Mode::Train), Err(Error::Precondition(_))));
    assert!(forward(&spec, &w, &x, Mode::Eval).is_ok());
}

#[test]
fn batch_shape_mismatch_is_reported() {
    let (spec, w) = bn_probe(1e-5);
    let x = random_tensor(vec![3, 2, 5, 6], 0, 1.0);
    assert!(matches!(forward(&spec, &w, &x, Mode::Eval), Err(Error::ShapeMismatch { layer: 0, .. })));
}

#[test]
fn overflow_is_reported_with_layer() {
    let spec = NetworkSpec::new(
        vec![1],
        vec![
            Layer::Dense { inputs: 1, outputs: 1, bias: false },
            Layer::Activation { activation: Activation::Polynomial { coefficients: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0] } },
            Layer::Dense { inputs: 1, outputs: 1, bias: false },
            Layer::Activation { activation: Activation::Polynomial { coefficients: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0] } },
        ],
        LossKind::SquareLoss,
    );
    let mut w = WeightSnapshot::init(&spec, 0).unwrap();
    w.get_mut("0.weight").unwrap().data[0] = 1e60;
    w.get_mut("2.weight").unwrap().data[0] = 1.0;
    let x = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
    assert!(matches!(forward(&spec, &w, &x, Mode::Eval), Err(Error::NumericOverflow { layer: 1 })));
}

#[test]
fn two_layer_square_polynomial_composes() {
    // f(x) = P(1 * P(1 * x)), P(z) = z^2, at x = 2: (2^2)^2 = 16.
    let sq = Activation::Polynomial { coefficients: vec![0.0, 0.0, 1.0] };
    let spec = NetworkSpec::new(
        vec![1],
        vec![
            Layer::Dense { inputs: 1, outputs: 1, bias: false },
            Layer::Activation { activation: sq.clone() },
            Layer::Dense { inputs: 1, outputs: 1, bias: false },
            Layer::Activation { activation: sq },
        ],
        LossKind::SquareLoss,
    );
    let mut w = WeightSnapshot::init(&spec, 0).unwrap();
    w.get_mut("0.weight").unwrap().data[0] = 1.0;
    w.get_mut("2.weight").unwrap().data[0] = 1.0;
    let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
    assert_eq!(forward(&spec, &w, &x, Mode::Eval).unwrap().data(), &[16.0]);
}

#[test]
fn forward_is_bitwise_repeatable() {
    let spec = NetworkSpec::conv_stack([3, 8, 8], &[4, 8], 10, Activation::Relu);
    let w = WeightSnapshot::init(&spec, 2).unwrap();
    let x = random_tensor(vec![6, 3, 8, 8], 3, 1.0);
    for mode in [Mode::Train, Mode::Eval] {
        let a = forward(&spec, &w, &x, mode).unwrap();
        let b = forward(&spec, &w, &x, mode).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn zero_gradient_at_exact_interpolation() {
    // Single dense layer with square loss; choose targets equal to outputs.
    let spec = NetworkSpec::new(
        vec![3],
        vec![Layer::Dense { inputs: 3, outputs: 2, bias: true }],
        LossKind::SquareLoss,
    );
    let w = WeightSnapshot::init(&spec, 9).unwrap();
    let x = random_tensor(vec![4, 3], 4, 1.0);
    let y = forward(&spec, &w, &x, Mode::Train).unwrap();
    let g = gradients(&spec, &w, &x, &Targets::Values(y)).unwrap();
    for arr in &g.arrays {
        assert!(arr.data.iter().all(|v| v.abs() <= 1e-12));
    }
}

fn check_fd(spec: &NetworkSpec, w: &WeightSnapshot, x: &Tensor, t: &Targets, probes: usize, seed: u64) -> f64 {
    let grads = gradients(spec, w, x, t).unwrap();
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let arr = &grads.arrays[rng.random_range(0..grads.arrays.len())];
        let idx = rng.random_range(0..arr.data.len());
        let fd = finite_difference(spec, w, x, t, &arr.name, idx, 1e-5);
        worst = worst.max(relative_error(arr.data[idx], fd));
    }
    worst
}

#[test]
fn polynomial_mlp_gradients_match_finite_differences() {
    for seed in 0..6 {
        let spec = small_poly_mlp(seed);
        let w = WeightSnapshot::init(&spec, seed + 100).unwrap();
        let x = random_tensor(vec![5, 3], seed + 200, 1.0);
        let t = Targets::Classes(random_classes(5, 3, seed));
        let worst = check_fd(&spec, &w, &x, &t, 100, seed);
        assert!(worst <= 1e-5, "seed {seed}: {worst}");
    }
}

#[test]
fn conv_batch_norm_polynomial_gradients_match_finite_differences() {
    let act = Activation::Polynomial { coefficients: vec![0.05, 0.5, 0.25, -0.02] };
    let mut spec = NetworkSpec::conv_stack([2, 6, 6], &[3, 4], 3, act);
    spec.loss = LossKind::CrossEntropy;
    let w = WeightSnapshot::init(&spec, 1).unwrap();
    let x = random_tensor(vec![4, 2, 6, 6], 2, 1.0);
    let t = Targets::Classes(vec![0, 1, 2, 1]);
    let worst = check_fd(&spec, &w, &x, &t, 100, 3);
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn relu_gradients_match_when_away_from_kink() {
    let spec = NetworkSpec::new(
        vec![3],
        vec![
            Layer::Dense { inputs: 3, outputs: 6, bias: true },
            Layer::Activation { activation: Activation::Relu },
            Layer::Dense { inputs: 6, outputs: 3, bias: true },
        ],
        LossKind::CrossEntropy,
    );
    let mut checked = 0;
    for seed in 0..40 {
        let w = WeightSnapshot::init(&spec, seed).unwrap();
        let x = random_tensor(vec![4, 3], seed + 50, 1.0);
        let trace = forward_trace(&spec, &w, &x, Mode::Train).unwrap();
        if trace.activation_inputs().iter().any(|(_, z)| z.iter().any(|v| v.abs() <= 1e-4)) {
            continue;
        }
        let t = Targets::Classes(random_classes(4, 3, seed));
        let worst = check_fd(&spec, &w, &x, &t, 100, seed);
        assert!(worst <= 1e-5, "seed {seed}: {worst}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn cross_entropy_of_network_output_is_finite() {
    let spec = NetworkSpec::conv_stack([3, 8, 8], &[4], 10, Activation::Relu);
    let w = WeightSnapshot::init(&spec, 0).unwrap();
    let x = random_tensor(vec![3, 3, 8, 8], 0, 1.0);
    let out = forward(&spec, &w, &x, Mode::Train).unwrap();
    let l = loss(&out, &Targets::Classes(vec![1, 2, 3]), spec.loss).unwrap();
    assert!(l.is_finite() && l >= 0.0);
}
