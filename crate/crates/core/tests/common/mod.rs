#![allow(dead_code)]

use rand::Rng;
use rll_core::nn::{
    forward_trace, loss, Activation, Layer, LossKind, Mode, NetworkSpec, Targets, WeightSnapshot,
};
use rll_core::rng::rng_from;
use rll_core::Tensor;

pub fn random_tensor(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor {
    let mut rng = rng_from(seed);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_classes(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Train-mode loss at the given weights, used by finite differences.
pub fn train_loss(spec: &NetworkSpec, w: &WeightSnapshot, x: &Tensor, t: &Targets) -> f64 {
    let out = forward_trace(spec, w, x, Mode::Train).unwrap().output;
    loss(&out, t, spec.loss).unwrap()
}

/// Central-difference estimate of d(loss)/d(array[name][idx]).
pub fn finite_difference(
    spec: &NetworkSpec,
    w: &WeightSnapshot,
    x: &Tensor,
    t: &Targets,
    name: &str,
    idx: usize,
    h: f64,
) -> f64 {
    let mut plus = w.clone();
    plus.get_mut(name).unwrap().data[idx] += h;
    let mut minus = w.clone();
    minus.get_mut(name).unwrap().data[idx] -= h;
    (train_loss(spec, &plus, x, t) - train_loss(spec, &minus, x, t)) / (2.0 * h)
}

/// Relative error with a floor on the denominator so entries that are
/// numerically zero are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub fn small_poly_mlp(seed: u64) -> NetworkSpec {
    let mut rng = rng_from(seed);
    let coefficients: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
    let act = Activation::Polynomial { coefficients };
    NetworkSpec::new(
        vec![3],
        vec![
            Layer::Dense { inputs: 3, outputs: 5, bias: true },
            Layer::Activation { activation: act.clone() },
            Layer::Dense { inputs: 5, outputs: 4, bias: true },
            Layer::Activation { activation: act },
            Layer::Dense { inputs: 4, outputs: 3, bias: false },
        ],
        if seed.is_multiple_of(2) { LossKind::CrossEntropy } else { LossKind::SquareLoss },
    )
}
